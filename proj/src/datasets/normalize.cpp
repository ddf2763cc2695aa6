#include <algorithm>
#include <stdexcept>

#include "pdiff/datasets.hpp"

namespace pdiff {

double ChannelRange::normalize(double x) const {
  if (degenerate()) return 0.0;
  return 2.0 * (x - min) / (max - min) - 1.0;
}

double ChannelRange::denormalize(double x) const {
  if (degenerate()) return min;
  return (x + 1.0) * 0.5 * (max - min) + min;
}

void ChannelRange::include(double x) {
  min = std::min(min, x);
  max = std::max(max, x);
}

namespace {

NormStats seed_stats(const Trajectory& t) {
  NormStats s;
  for (std::size_t i = 0; i < kStateDim; ++i) s.state[i] = {t.states[0][i], t.states[0][i]};
  for (std::size_t i = 0; i < kActionDim; ++i) s.action[i] = {t.actions[0][i], t.actions[0][i]};
  s.reward = {t.rewards[0], t.rewards[0]};
  s.rtg = {t.rtg[0], t.rtg[0]};
  return s;
}

void extend(NormStats& s, const Trajectory& t) {
  for (std::size_t k = 0; k < t.length(); ++k) {
    for (std::size_t i = 0; i < kStateDim; ++i) s.state[i].include(t.states[k][i]);
    for (std::size_t i = 0; i < kActionDim; ++i) s.action[i].include(t.actions[k][i]);
    s.reward.include(t.rewards[k]);
    s.rtg.include(t.rtg[k]);
  }
}

}  // namespace

NormStats fit_norm_stats(std::span<const Trajectory> trajs) {
  const std::vector<Trajectory> one(trajs.begin(), trajs.end());
  return fit_norm_stats(std::span<const std::vector<Trajectory>>(&one, 1));
}

NormStats fit_norm_stats(std::span<const std::vector<Trajectory>> datasets) {
  const Trajectory* first = nullptr;
  for (const auto& ds : datasets)
    for (const auto& t : ds)
      if (!first && t.length() > 0) first = &t;
  if (!first) throw std::invalid_argument("fit_norm_stats: empty dataset");
  NormStats s = seed_stats(*first);
  for (const auto& ds : datasets)
    for (const auto& t : ds) extend(s, t);
  return s;
}

Trajectory normalize(const Trajectory& traj, const NormStats& stats) {
  Trajectory out = traj;
  for (std::size_t k = 0; k < out.length(); ++k) {
    for (std::size_t i = 0; i < kStateDim; ++i) out.states[k][i] = stats.state[i].normalize(traj.states[k][i]);
    for (std::size_t i = 0; i < kActionDim; ++i) out.actions[k][i] = stats.action[i].normalize(traj.actions[k][i]);
    out.rewards[k] = stats.reward.normalize(traj.rewards[k]);
    out.rtg[k] = stats.rtg.normalize(traj.rtg[k]);
  }
  return out;
}

Trajectory denormalize(const Trajectory& traj, const NormStats& stats) {
  Trajectory out = traj;
  for (std::size_t k = 0; k < out.length(); ++k) {
    for (std::size_t i = 0; i < kStateDim; ++i) out.states[k][i] = stats.state[i].denormalize(traj.states[k][i]);
    for (std::size_t i = 0; i < kActionDim; ++i) out.actions[k][i] = stats.action[i].denormalize(traj.actions[k][i]);
    out.rewards[k] = stats.reward.denormalize(traj.rewards[k]);
    out.rtg[k] = stats.rtg.denormalize(traj.rtg[k]);
  }
  return out;
}

}  // namespace pdiff
