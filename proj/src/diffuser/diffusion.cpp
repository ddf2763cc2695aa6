#include <cmath>
#include <stdexcept>

#include "pdiff/diffuser.hpp"
#include "pdiff/ops.hpp"

namespace pdiff {

Tensor to_prompt_tensor(const Trajectory& segment) {
  const std::size_t L = segment.length();
  Tensor x(Shape{1, prompt_dim(L)});
  for (std::size_t j = 0; j < L; ++j) {
    for (std::size_t i = 0; i < kStateDim; ++i) x[i * L + j] = segment.states[j][i];
    for (std::size_t i = 0; i < kActionDim; ++i) x[(kStateDim + i) * L + j] = segment.actions[j][i];
    x[(kStateDim + kActionDim) * L + j] = segment.rewards[j];
  }
  return x;
}

Condition condition_of(const Trajectory& segment) { return Condition{segment.rtg, segment.timesteps}; }

Trajectory from_prompt_tensor(std::span<const double> x, const Condition& y) {
  const std::size_t L = y.rtg.size();
  if (x.size() != prompt_dim(L)) {
    throw std::invalid_argument("from_prompt_tensor: " + std::to_string(x.size()) + " values for " +
                                std::to_string(L) + " steps");
  }
  Trajectory t;
  t.rtg = y.rtg;
  t.timesteps = y.timesteps;
  for (std::size_t j = 0; j < L; ++j) {
    t.states.push_back({x[j], x[L + j]});
    t.actions.push_back({x[kStateDim * L + j], x[(kStateDim + 1) * L + j]});
    t.rewards.push_back(x[(kStateDim + kActionDim) * L + j]);
  }
  return t;
}

DiffusionBatch DiffusionBatch::from_segments(std::span<const Trajectory> segments) {
  if (segments.empty()) throw std::invalid_argument("DiffusionBatch: no segments");
  const std::size_t D = prompt_dim(segments[0].length());
  DiffusionBatch b;
  b.x0 = Tensor(Shape{segments.size(), D});
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].length() != segments[0].length()) throw std::invalid_argument("DiffusionBatch: ragged segments");
    const Tensor x = to_prompt_tensor(segments[i]);
    std::copy(x.values().begin(), x.values().end(), b.x0.data() + i * D);
    b.cond.push_back(condition_of(segments[i]));
  }
  return b;
}

DmNoise draw_dm_noise(std::size_t batch, std::size_t dim, const NoiseSchedule& schedule, Rng& rng) {
  DmNoise n;
  n.eps = Tensor(Shape{batch, dim});
  for (std::size_t b = 0; b < batch; ++b) {
    n.k.push_back(1 + uniform_index(rng, schedule.steps));
    for (std::size_t i = 0; i < dim; ++i) n.eps[b * dim + i] = normal(rng);
  }
  return n;
}

Var loss_dm(Graph& g, const EpsPredictor& eps, const DiffusionBatch& batch, const NoiseSchedule& schedule,
            const DmNoise& noise) {
  const std::size_t B = batch.x0.rows();
  const std::size_t D = batch.x0.cols();
  if (B == 0) throw std::invalid_argument("loss_dm: empty batch");
  if (noise.k.size() != B || noise.eps.shape() != batch.x0.shape()) {
    throw std::invalid_argument("loss_dm: noise does not match batch " + shape_str(batch.x0.shape()));
  }
  Tensor x_k(batch.x0.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t k = noise.k[b];
    if (k < 1 || k > schedule.steps) throw std::out_of_range("loss_dm: diffusion step out of range");
    const double a = std::sqrt(schedule.alpha_bar_at(k));
    const double s = std::sqrt(1.0 - schedule.alpha_bar_at(k));
    for (std::size_t i = 0; i < D; ++i) x_k[b * D + i] = a * batch.x0[b * D + i] + s * noise.eps[b * D + i];
  }
  Var pred = eps(g.constant(std::move(x_k)), batch.cond, noise.k);
  return mse(pred, g.constant(noise.eps));
}

double loss_dm(const EpsNet& net, const ParamSet& params, const DiffusionBatch& batch, const NoiseSchedule& schedule,
               Rng& rng) {
  Graph g;
  BoundParams p(g, params, false);
  const DmNoise noise = draw_dm_noise(batch.x0.rows(), batch.x0.cols(), schedule, rng);
  return loss_dm(g, bind_predictor(net, p), batch, schedule, noise).value().item();
}

Var p_mean(Var x_k, Var eps_pred, std::size_t k, const NoiseSchedule& schedule) {
  if (k < 1 || k > schedule.steps) throw std::out_of_range("p_mean: diffusion step out of range");
  const double c = schedule.beta_at(k) / std::sqrt(1.0 - schedule.alpha_bar_at(k));
  return scale(sub(x_k, scale(eps_pred, c)), 1.0 / std::sqrt(schedule.alpha_at(k)));
}

Tensor p_mean(const Tensor& x_k, const Tensor& eps_pred, std::size_t k, const NoiseSchedule& schedule) {
  Graph g;
  return p_mean(g.constant(x_k), g.constant(eps_pred), k, schedule).value();
}

ChainNoise draw_chain_noise(std::size_t batch, std::size_t dim, const NoiseSchedule& schedule, Rng& rng) {
  ChainNoise n;
  n.x_n = Tensor(Shape{batch, dim});
  for (std::size_t i = 0; i < n.x_n.size(); ++i) n.x_n[i] = normal(rng);
  n.z.assign(schedule.steps, Tensor(Shape{batch, dim}));
  for (std::size_t k = schedule.steps; k >= 2; --k)
    for (std::size_t i = 0; i < n.z[k - 1].size(); ++i) n.z[k - 1][i] = normal(rng);
  return n;
}

Var sample_chain(Graph& g, const EpsPredictor& eps, std::span<const Condition> y, const NoiseSchedule& schedule,
                 double temperature, const ChainNoise& noise) {
  if (!(temperature >= 0.0 && temperature < 1.0)) {
    throw std::invalid_argument("sample_chain: temperature must lie in [0, 1)");
  }
  const std::size_t B = noise.x_n.rows();
  if (y.size() != B) throw std::invalid_argument("sample_chain: one condition per chain required");
  Var x = g.constant(noise.x_n);
  for (std::size_t k = schedule.steps; k >= 1; --k) {
    const std::vector<std::size_t> ks(B, k);
    x = p_mean(x, eps(x, y, ks), k, schedule);
    if (k > 1 && temperature > 0.0) {
      Tensor z = noise.z[k - 1];
      const double sd = std::sqrt(temperature * schedule.posterior_variance(k));
      for (std::size_t i = 0; i < z.size(); ++i) z[i] *= sd;
      x = add(x, g.constant(std::move(z)));
    }
  }
  return clamp(x, -1.0, 1.0);
}

Tensor sample_chain(const EpsNet& net, const ParamSet& params, std::span<const Condition> y,
                    const NoiseSchedule& schedule, double temperature, const ChainNoise& noise) {
  Graph g;
  BoundParams p(g, params, false);
  return sample_chain(g, bind_predictor(net, p), y, schedule, temperature, noise).value();
}

Tensor sample_chain(const EpsNet& net, const ParamSet& params, std::span<const Condition> y,
                    const NoiseSchedule& schedule, double temperature, Rng& rng) {
  const ChainNoise noise = draw_chain_noise(y.size(), net.config().x_dim(), schedule, rng);
  return sample_chain(net, params, y, schedule, temperature, noise);
}

}  // namespace pdiff
