#include <algorithm>
#include <stdexcept>

#include "pdiff/harness.hpp"

namespace pdiff {

Trajectory soft_prompt_tune(const FrozenPLM& plm, const Trajectory& init_prompt, std::span<const Trajectory> fewshot,
                            std::size_t steps, double lr, std::size_t batch, Rng& rng) {
  if (steps == 0) return init_prompt;
  if (!plm.params) throw std::invalid_argument("soft_prompt_tune: no PLM parameters");
  const std::size_t L = init_prompt.length();
  ParamSet tokens;
  {
    Tensor rtg(Shape{L, 1}), st(Shape{L, kStateDim}), ac(Shape{L, kActionDim});
    for (std::size_t j = 0; j < L; ++j) {
      rtg[j] = init_prompt.rtg[j];
      for (std::size_t i = 0; i < kStateDim; ++i) st.at(j, i) = init_prompt.states[j][i];
      for (std::size_t i = 0; i < kActionDim; ++i) ac.at(j, i) = init_prompt.actions[j][i];
    }
    tokens.add("rtg", std::move(rtg));
    tokens.add("states", std::move(st));
    tokens.add("actions", std::move(ac));
  }
  AdamWState opt =
      AdamWState::for_params(tokens, AdamWConfig{.lr = lr, .beta1 = 0.9, .beta2 = 0.95, .eps = 1e-8, .weight_decay = 1e-4});
  for (std::size_t s = 0; s < steps; ++s) {
    const auto hist = sample_history_batch(fewshot, plm.config.history_len, batch, rng);
    Graph g;
    BoundParams p(g, tokens);
    BoundParams frozen(g, *plm.params, false);
    const PromptBlock pb{p["rtg"], p["states"], p["actions"], init_prompt.timesteps, L};
    Var loss = loss_dt(frozen, plm.config, &pb, hist);
    g.backward(loss);
    adamw_step(tokens, p.grads(), opt);
    for (const auto& name : tokens.names())
      for (double& v : tokens[name].values()) v = std::clamp(v, -1.0, 1.0);
  }
  Trajectory out = init_prompt;
  for (std::size_t j = 0; j < L; ++j) {
    out.rtg[j] = tokens["rtg"][j];
    for (std::size_t i = 0; i < kStateDim; ++i) out.states[j][i] = tokens["states"].at(j, i);
    for (std::size_t i = 0; i < kActionDim; ++i) out.actions[j][i] = tokens["actions"].at(j, i);
  }
  return out;
}

}  // namespace pdiff
