#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pdiff/diffuser.hpp"

namespace pdiff {

NoiseSchedule make_schedule(std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("make_schedule: need at least one diffusion step");
  const double scale = 1000.0 / static_cast<double>(steps);
  const double lo = 1e-4 * scale;
  const double hi = 0.02 * scale;
  NoiseSchedule s;
  s.steps = steps;
  double abar = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double b = std::clamp(lo + frac * (hi - lo), 1e-12, 0.999);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    abar = abar * (1.0 - b);
    s.alpha_bar.push_back(abar);
  }
  return s;
}

double NoiseSchedule::posterior_variance(std::size_t k) const {
  return beta_at(k) * (1.0 - alpha_bar_at(k - 1)) / (1.0 - alpha_bar_at(k));
}

Tensor q_sample(const Tensor& x0, std::size_t k, const Tensor& eps, const NoiseSchedule& schedule) {
  if (k < 1 || k > schedule.steps) {
    throw std::out_of_range("q_sample: step " + std::to_string(k) + " outside 1.." + std::to_string(schedule.steps));
  }
  if (x0.shape() != eps.shape()) {
    throw std::invalid_argument("q_sample: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
  }
  const double a = std::sqrt(schedule.alpha_bar_at(k));
  const double b = std::sqrt(1.0 - schedule.alpha_bar_at(k));
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

}  // namespace pdiff
