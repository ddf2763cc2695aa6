#include "pdiff/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pdiff {

AdamWState AdamWState::for_params(const ParamSet& params, AdamWConfig config) {
  if (config.lr <= 0 || config.beta1 <= 0 || config.beta2 <= 0 || config.eps <= 0 || config.weight_decay < 0) {
    throw std::invalid_argument("AdamW hyperparameters must be positive");
  }
  return AdamWState{config, params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ParamSet& params, const ParamSet& grads, AdamWState& state) {
  const AdamWConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    if (!grads.contains(name)) continue;
    const Tensor& g = grads[name];
    Tensor& m = state.first_moment[name];
    Tensor& v = state.second_moment[name];
    if (g.shape() != p.shape() || m.shape() != p.shape()) {
      throw std::invalid_argument("adamw_step: '" + name + "' parameter " + shape_str(p.shape()) + " vs gradient " +
                                  shape_str(g.shape()));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= c.lr * c.weight_decay * p[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

double global_norm(const ParamSet& grads) {
  double s = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(ParamSet& grads, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double n = global_norm(grads);
  if (n > max_norm) {
    const double f = max_norm / n;
    for (auto& [_, g] : grads)
      for (auto& v : g.values()) v *= f;
  }
  return n;
}

}  // namespace pdiff
