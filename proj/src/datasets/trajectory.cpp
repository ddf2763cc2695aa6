#include <algorithm>
#include <stdexcept>
#include <type_traits>

#include "pdiff/datasets.hpp"

namespace pdiff {

Trajectory Trajectory::window(std::size_t start, std::size_t len) const {
  if (start + len > length()) {
    throw std::out_of_range("window [" + std::to_string(start) + ", " + std::to_string(start + len) +
                            ") outside trajectory of length " + std::to_string(length()));
  }
  auto cut = [&](const auto& v) { return std::decay_t<decltype(v)>(v.begin() + start, v.begin() + start + len); };
  return Trajectory{cut(states), cut(actions), cut(rewards), cut(rtg), cut(timesteps)};
}

std::vector<double> compute_rtg(std::span<const double> rewards) {
  if (rewards.empty()) throw std::invalid_argument("compute_rtg: empty reward sequence");
  std::vector<double> rtg(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + acc;
    rtg[i] = acc;
  }
  return rtg;
}

std::vector<Trajectory> collect(const TaskSpec& task, Tier tier, std::size_t n_episodes, std::uint64_t seed) {
  if (n_episodes == 0) throw std::invalid_argument("collect: n_episodes must be >= 1");
  std::vector<Trajectory> out;
  out.reserve(n_episodes);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    Rng policy_rng(derive_seed(seed, 2 * e + 1));
    EnvState s = reset(task, derive_seed(seed, 2 * e));
    Trajectory traj;
    for (int t = 0; t < kHorizon; ++t) {
      const Vec2 obs = observe(s);
      const Vec2 a = scripted_policy(task, tier, s, policy_rng);
      const StepResult r = step(task, s, a);
      traj.states.push_back(obs);
      traj.actions.push_back({std::clamp(a[0], -1.0, 1.0), std::clamp(a[1], -1.0, 1.0)});
      traj.rewards.push_back(r.reward);
      traj.timesteps.push_back(static_cast<std::size_t>(t));
      s = r.state;
    }
    traj.rtg = compute_rtg(traj.rewards);
    out.push_back(std::move(traj));
  }
  return out;
}

double episode_return(const Trajectory& traj) {
  double s = 0.0;
  for (double r : traj.rewards) s += r;
  return s;
}

double mean_return(std::span<const Trajectory> trajs) {
  if (trajs.empty()) throw std::invalid_argument("mean_return: no trajectories");
  double s = 0.0;
  for (const auto& t : trajs) s += episode_return(t);
  return s / static_cast<double>(trajs.size());
}

}  // namespace pdiff
