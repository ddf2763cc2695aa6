#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pdiff/autodiff.hpp"
#include "pdiff/datasets.hpp"

namespace pdiff {

/// Variance schedule over N steps. Vectors are indexed by k - 1 for k = 1..N.
struct NoiseSchedule {
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double beta_at(std::size_t k) const { return beta[k - 1]; }
  double alpha_at(std::size_t k) const { return alpha[k - 1]; }
  double alpha_bar_at(std::size_t k) const { return k == 0 ? 1.0 : alpha_bar[k - 1]; }
  /// Reverse-process variance beta_k (1 - abar_{k-1}) / (1 - abar_k).
  double posterior_variance(std::size_t k) const;
};

/// Linear betas from 1e-4 * 1000/N to 0.02 * 1000/N, clamped below 0.999.
NoiseSchedule make_schedule(std::size_t steps);

/// Return-to-go row (normalized) and timestep row of a prompt.
struct Condition {
  std::vector<double> rtg;
  std::vector<std::size_t> timesteps;
  bool operator==(const Condition&) const = default;
};

/// Flattened prompt matrix with rows (state dims, action dims, reward) over
/// `steps` columns; row-major, so entry (row r, column j) sits at r*steps + j.
inline constexpr std::size_t kPromptRows = kStateDim + kActionDim + 1;
inline std::size_t prompt_dim(std::size_t steps) { return kPromptRows * steps; }

Tensor to_prompt_tensor(const Trajectory& segment);
Condition condition_of(const Trajectory& segment);
/// States, actions and rewards from `x`; return-to-go and timesteps from `y`.
Trajectory from_prompt_tensor(std::span<const double> x, const Condition& y);

Tensor q_sample(const Tensor& x0, std::size_t k, const Tensor& eps, const NoiseSchedule& schedule);

struct EpsNetConfig {
  std::size_t prompt_len = 5;
  std::size_t hidden = 256;
  std::size_t time_dim = 16;
  std::size_t step_dim = 32;
  std::size_t max_timestep = kHorizon;

  std::size_t x_dim() const { return prompt_dim(prompt_len); }
  std::size_t input_dim() const { return x_dim() + prompt_len + time_dim + step_dim; }
};

std::vector<double> sinusoidal_embedding(std::size_t k, std::size_t dim);

/// Noise predictor: 3-layer Mish MLP over [x_k, rtg row, mean timestep
/// embedding, sinusoidal step embedding].
class EpsNet {
 public:
  explicit EpsNet(EpsNetConfig cfg = {}) : cfg_(cfg) {}
  const EpsNetConfig& config() const { return cfg_; }

  ParamSet init(Rng& rng) const;
  Var forward(const BoundParams& p, Var x_k, std::span<const Condition> y, std::span<const std::size_t> k) const;
  Tensor predict(const ParamSet& params, const Tensor& x_k, std::span<const Condition> y,
                 std::span<const std::size_t> k) const;

 private:
  EpsNetConfig cfg_;
};

/// Anything that maps (x_k, y, k) to a noise estimate on a graph.
using EpsPredictor = std::function<Var(Var x_k, std::span<const Condition> y, std::span<const std::size_t> k)>;
EpsPredictor bind_predictor(const EpsNet& net, const BoundParams& p);

struct DiffusionBatch {
  Tensor x0;  // [B x D]
  std::vector<Condition> cond;

  static DiffusionBatch from_segments(std::span<const Trajectory> segments);
};

/// Per-item diffusion step k ~ U{1..N} and eps ~ N(0, I).
struct DmNoise {
  std::vector<std::size_t> k;
  Tensor eps;
};
DmNoise draw_dm_noise(std::size_t batch, std::size_t dim, const NoiseSchedule& schedule, Rng& rng);

/// Mean squared error between eps and the prediction at the noised input.
Var loss_dm(Graph& g, const EpsPredictor& eps, const DiffusionBatch& batch, const NoiseSchedule& schedule,
            const DmNoise& noise);
double loss_dm(const EpsNet& net, const ParamSet& params, const DiffusionBatch& batch, const NoiseSchedule& schedule,
               Rng& rng);

/// (x_k - beta_k / sqrt(1 - abar_k) * eps) / sqrt(alpha_k)
Var p_mean(Var x_k, Var eps_pred, std::size_t k, const NoiseSchedule& schedule);
Tensor p_mean(const Tensor& x_k, const Tensor& eps_pred, std::size_t k, const NoiseSchedule& schedule);

/// Reparameterized reverse-chain noise, drawn up front: x_N and one z per
/// step k = N..2 (stored at z[k - 1]; z[0] stays zero).
struct ChainNoise {
  Tensor x_n;
  std::vector<Tensor> z;
};
ChainNoise draw_chain_noise(std::size_t batch, std::size_t dim, const NoiseSchedule& schedule, Rng& rng);

/// Low-temperature ancestral sampling; differentiable in whatever `eps`
/// depends on. The result is clamped to [-1, 1].
Var sample_chain(Graph& g, const EpsPredictor& eps, std::span<const Condition> y, const NoiseSchedule& schedule,
                 double temperature, const ChainNoise& noise);
Tensor sample_chain(const EpsNet& net, const ParamSet& params, std::span<const Condition> y,
                    const NoiseSchedule& schedule, double temperature, Rng& rng);
Tensor sample_chain(const EpsNet& net, const ParamSet& params, std::span<const Condition> y,
                    const NoiseSchedule& schedule, double temperature, const ChainNoise& noise);

}  // namespace pdiff
