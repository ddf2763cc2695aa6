#include <stdexcept>

#include "pdiff/guidance.hpp"
#include "pdiff/ops.hpp"

namespace pdiff {

PromptBlock generated_prompt(Var x0, std::span<const Condition> y) {
  if (y.empty()) throw std::invalid_argument("generated_prompt: no conditions");
  const std::size_t B = x0.rows();
  const std::size_t L = y[0].rtg.size();
  const std::size_t D = prompt_dim(L);
  if (y.size() != B || x0.cols() != D) {
    throw std::invalid_argument("generated_prompt: samples " + shape_str(x0.shape()) + " do not match " +
                                std::to_string(y.size()) + " conditions of length " + std::to_string(L));
  }
  Graph& g = *x0.graph;
  Var flat = reshape(x0, Shape{B * D, 1});
  auto pick = [&](std::size_t first_row, std::size_t width) {
    std::vector<std::size_t> idx;
    idx.reserve(B * L * width);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < L; ++j)
        for (std::size_t i = 0; i < width; ++i) idx.push_back(b * D + (first_row + i) * L + j);
    return reshape(gather_rows(flat, idx), Shape{B * L, width});
  };

  PromptBlock pb;
  pb.steps = L;
  Tensor rtg(Shape{B * L, 1});
  for (std::size_t b = 0; b < B; ++b) {
    if (y[b].rtg.size() != L || y[b].timesteps.size() != L) throw std::invalid_argument("generated_prompt: ragged");
    for (std::size_t j = 0; j < L; ++j) rtg[b * L + j] = y[b].rtg[j];
    pb.timesteps.insert(pb.timesteps.end(), y[b].timesteps.begin(), y[b].timesteps.end());
  }
  pb.rtg = g.constant(std::move(rtg));
  pb.states = pick(0, kStateDim);
  pb.actions = pick(kStateDim, kActionDim);
  return pb;
}

Var guidance_loss(Graph& g, const EpsPredictor& eps, const FrozenPLM& plm, std::span<const Condition> y,
                  std::span<const Trajectory> histories, const NoiseSchedule& schedule, double temperature,
                  const ChainNoise& noise) {
  if (!plm.params) throw std::invalid_argument("guidance_loss: no PLM parameters");
  if (y.size() != 1 && y.size() != histories.size()) {
    throw std::invalid_argument("guidance_loss: need one shared condition or one per history");
  }
  Var x0 = sample_chain(g, eps, y, schedule, temperature, noise);
  const PromptBlock pb = generated_prompt(x0, y);
  BoundParams frozen(g, *plm.params, false);
  return loss_dt(frozen, plm.config, &pb, histories, false, nullptr);
}

double guidance_loss(const EpsNet& net, const ParamSet& theta, const FrozenPLM& plm, std::span<const Condition> y,
                     std::span<const Trajectory> histories, const NoiseSchedule& schedule, double temperature,
                     Rng& rng) {
  Graph g;
  BoundParams p(g, theta, false);
  const ChainNoise noise = draw_chain_noise(y.size(), net.config().x_dim(), schedule, rng);
  return guidance_loss(g, bind_predictor(net, p), plm, y, histories, schedule, temperature, noise).value().item();
}

}  // namespace pdiff
