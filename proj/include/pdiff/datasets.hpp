#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pdiff/envs.hpp"
#include "pdiff/rng.hpp"

namespace pdiff {

/// One episode, or a contiguous window of one. All sequences share a length.
struct Trajectory {
  std::vector<Vec2> states;
  std::vector<Vec2> actions;
  std::vector<double> rewards;
  std::vector<double> rtg;
  std::vector<std::size_t> timesteps;

  std::size_t length() const { return rewards.size(); }
  Trajectory window(std::size_t start, std::size_t len) const;
  bool operator==(const Trajectory&) const = default;
};

/// Suffix sums: rtg[t] = rewards[t] + rtg[t + 1].
std::vector<double> compute_rtg(std::span<const double> rewards);

std::vector<Trajectory> collect(const TaskSpec& task, Tier tier, std::size_t n_episodes, std::uint64_t seed);
double episode_return(const Trajectory& traj);
double mean_return(std::span<const Trajectory> trajs);

/// Min/max scaling of one channel onto [-1, 1]. A constant channel maps to 0
/// and denormalizes back to its constant.
struct ChannelRange {
  double min = 0.0;
  double max = 0.0;

  bool degenerate() const { return !(max > min); }
  double normalize(double x) const;
  double denormalize(double x) const;
  void include(double x);
  bool operator==(const ChannelRange&) const = default;
};

struct NormStats {
  std::array<ChannelRange, kStateDim> state;
  std::array<ChannelRange, kActionDim> action;
  ChannelRange reward;
  ChannelRange rtg;
  bool operator==(const NormStats&) const = default;
};

NormStats fit_norm_stats(std::span<const Trajectory> trajs);
/// Fits over several datasets at once.
NormStats fit_norm_stats(std::span<const std::vector<Trajectory>> datasets);
/// Timesteps are carried through unchanged.
Trajectory normalize(const Trajectory& traj, const NormStats& stats);
Trajectory denormalize(const Trajectory& traj, const NormStats& stats);

/// Uniform trajectory, then a uniform contiguous window of `len` steps.
Trajectory sample_prompt(std::span<const Trajectory> dataset, std::size_t len, Rng& rng);
std::vector<Trajectory> sample_history_batch(std::span<const Trajectory> dataset, std::size_t len,
                                             std::size_t batch, Rng& rng);

struct DatasetHeader {
  int format_version = 1;
  Family family = Family::Dir1d;
  std::size_t task_index = 0;
  std::string tier = "expert";
  std::uint64_t seed = 0;
  int horizon = kHorizon;
  bool generated = false;
  NormStats stats;
  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Trajectory> trajectories;
  bool operator==(const Dataset&) const = default;
};

/// Line-delimited records: a header object, then one trajectory object per
/// line. Reals are written as decimals with 17 significant digits.
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);
std::string dataset_filename(Family family, std::size_t task_index, const std::string& tier);

}  // namespace pdiff
