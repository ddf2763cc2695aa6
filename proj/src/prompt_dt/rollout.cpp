#include <algorithm>
#include <cmath>
#include <optional>

#include "pdiff/prompt_dt.hpp"

namespace pdiff {

EnvModel EnvModel::for_task(const TaskSpec& task) {
  return EnvModel{[task](std::uint64_t seed) { return pdiff::reset(task, seed); },
                  [task](const EnvState& s, Vec2 a) { return pdiff::step(task, s, a); }};
}

RolloutResult rollout(const ParamSet& params, const PLMConfig& cfg, const NormStats& stats, const Trajectory* prompt,
                      const EnvModel& env, double target_rtg, std::size_t n_episodes, std::uint64_t seed) {
  RolloutResult res;
  if (n_episodes == 0) return res;
  std::vector<EnvState> states;
  std::vector<Trajectory> hist(n_episodes);
  std::vector<double> rtg(n_episodes, target_rtg);
  res.returns.assign(n_episodes, 0.0);
  for (std::size_t e = 0; e < n_episodes; ++e) states.push_back(env.reset(derive_seed(seed, e)));

  const bool use_prompt = prompt && prompt->length() > 0;
  for (int t = 0; t < kHorizon; ++t) {
    for (std::size_t e = 0; e < n_episodes; ++e) {
      const Vec2 obs = observe(states[e]);
      hist[e].rtg.push_back(stats.rtg.normalize(rtg[e]));
      hist[e].states.push_back({stats.state[0].normalize(obs[0]), stats.state[1].normalize(obs[1])});
      hist[e].actions.push_back({0.0, 0.0});
      hist[e].rewards.push_back(0.0);
      hist[e].timesteps.push_back(static_cast<std::size_t>(t));
    }
    const std::size_t len = std::min<std::size_t>(hist[0].length(), cfg.history_len);
    const std::size_t start = hist[0].length() - len;
    std::vector<Trajectory> windows;
    windows.reserve(n_episodes);
    for (const auto& h : hist) windows.push_back(h.window(start, len));

    Graph g;
    BoundParams p(g, params, false);
    std::optional<PromptBlock> pb;
    if (use_prompt) pb = prompt_constants(g, std::span<const Trajectory>(prompt, 1));
    const Tensor pred = plm_forward(p, cfg, pb ? &*pb : nullptr, windows).value();
    const std::size_t per = (use_prompt ? prompt->length() : 0) + len;

    for (std::size_t e = 0; e < n_episodes; ++e) {
      const std::size_t row = e * per + per - 1;
      Vec2 a;
      for (std::size_t i = 0; i < kActionDim; ++i) {
        a[i] = std::clamp(stats.action[i].denormalize(pred.at(row, i)), -1.0, 1.0);
      }
      const StepResult r = env.step(states[e], a);
      states[e] = r.state;
      res.returns[e] += r.reward;
      rtg[e] -= r.reward;
      hist[e].actions.back() = {stats.action[0].normalize(a[0]), stats.action[1].normalize(a[1])};
      hist[e].rewards.back() = r.reward;
    }
  }

  double s = 0.0;
  for (double r : res.returns) s += r;
  res.mean = s / static_cast<double>(n_episodes);
  double v = 0.0;
  for (double r : res.returns) v += (r - res.mean) * (r - res.mean);
  res.stddev = std::sqrt(v / static_cast<double>(n_episodes));
  return res;
}

}  // namespace pdiff
