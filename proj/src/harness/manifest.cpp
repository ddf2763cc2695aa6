#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "pdiff/harness.hpp"

#ifndef PDIFF_GIT_DESCRIBE
#define PDIFF_GIT_DESCRIBE "unknown"
#endif

namespace pdiff {

std::string git_describe() { return PDIFF_GIT_DESCRIBE; }

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config_digest"] = m.config_digest;
  j["config"] = m.config.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json::parse(m.config);
  j["seeds"] = m.seeds;
  j["outputs"] = m.outputs;
  j["git_describe"] = git_describe();
  j["wall_ms"] = m.wall_ms;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace pdiff
