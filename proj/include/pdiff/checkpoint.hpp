#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "pdiff/params.hpp"

namespace pdiff {

/// Binary parameter checkpoint, all integers and reals little-endian:
///
///   "PDCK"          4-byte magic
///   u8              format version (1)
///   u32             record count
///   per record:
///     u32           name length, then that many bytes of UTF-8 name
///     u32           rank, then rank x u64 dimension sizes
///     f64[numel]    values, row-major
///
/// Records appear in ParamSet order, so a load reproduces iteration order.
inline constexpr std::uint8_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ParamSet& params);
ParamSet read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace pdiff
