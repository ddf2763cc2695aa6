#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>

#include "pdiff/autodiff.hpp"
#include "pdiff/ops.hpp"

namespace pdiff::testing {

using LossFn = std::function<Var(Graph&, const BoundParams&)>;

inline double loss_value(const LossFn& f, const ParamSet& params) {
  Graph g;
  BoundParams p(g, params, false);
  return f(g, p).value().item();
}

/// Largest |analytic - central difference| / max(|analytic|, |numeric|, floor)
/// over every parameter entry, or over `max_entries` of them spread evenly.
inline double max_rel_error(const LossFn& f, const ParamSet& params, double h = 1e-5, double floor = 1e-6,
                            std::size_t max_entries = 0) {
  const ParamSet analytic = grad(f, params);
  ParamSet probe = params;
  double worst = 0.0;
  for (const auto& [name, t] : params) {
    const std::size_t n = t.size();
    const std::size_t stride = max_entries && n > max_entries ? n / max_entries : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      Tensor& w = probe[name];
      const double orig = w[i];
      w[i] = orig + h;
      const double up = loss_value(f, probe);
      w[i] = orig - h;
      const double down = loss_value(f, probe);
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[name][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline ParamSet params_of(std::initializer_list<std::pair<std::string, Tensor>> items) {
  ParamSet ps;
  for (const auto& [n, t] : items) ps.add(n, t);
  return ps;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

/// sum(out * R) for a fixed random R, so every output entry carries weight.
inline Var weighted_sum(Var out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, out.graph->constant(random_tensor(out.shape(), rng))));
}

}  // namespace pdiff::testing
