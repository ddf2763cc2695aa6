#include <cmath>

#include "pdiff/guidance.hpp"

namespace pdiff {

double Quadratic::value(const Vec2& x) const {
  const double dx = x[0] - center[0], dy = x[1] - center[1];
  return weight * (dx * dx + dy * dy);
}

Vec2 Quadratic::gradient(const Vec2& x) const {
  return {2.0 * weight * (x[0] - center[0]), 2.0 * weight * (x[1] - center[1])};
}

bool TheoremReport::all_satisfied() const {
  for (const auto& r : runs)
    if (!r.satisfied) return false;
  return !runs.empty();
}

TheoremReport theorem1_check(const Quadratic& l1, const Quadratic& l2, double step_size, std::size_t iters,
                             std::size_t starts, std::uint64_t seed, double tol) {
  Rng rng(seed);
  TheoremReport rep;
  const std::vector<std::pair<std::string, Shape>> layout{{"x", Shape{2}}};
  for (std::size_t s = 0; s < starts; ++s) {
    TheoremRun run;
    run.start = {uniform(rng, -2.0, 2.0), uniform(rng, -2.0, 2.0)};
    Vec2 x = run.start;
    auto check = [&] {
      const Vec2 g1 = l1.gradient(x), g2 = l2.gradient(x);
      const FlatGrad a{{g1[0], g1[1]}, layout}, b{{g2[0], g2[1]}, layout};
      run.cos_angle = cosine(a, b);
      run.grad_norm = std::hypot(g1[0] + g2[0], g1[1] + g2[1]);
      run.satisfied = run.cos_angle <= -1.0 + tol || run.grad_norm <= tol;
      return std::pair{a, b};
    };
    for (run.iterations = 0; run.iterations < iters; ++run.iterations) {
      const auto [g1, g2] = check();
      if (run.satisfied) break;
      const FlatGrad d = combine(g1, g2, 1.0);
      x = {x[0] - step_size * d.values[0], x[1] - step_size * d.values[1]};
    }
    check();
    run.end = x;
    rep.runs.push_back(run);
  }
  return rep;
}

}  // namespace pdiff
