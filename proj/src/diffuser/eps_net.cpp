#include <cmath>
#include <stdexcept>

#include "pdiff/diffuser.hpp"
#include "pdiff/ops.hpp"

namespace pdiff {

std::vector<double> sinusoidal_embedding(std::size_t k, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(static_cast<double>(k) * freq);
    out[half + i] = std::cos(static_cast<double>(k) * freq);
  }
  return out;
}

ParamSet EpsNet::init(Rng& rng) const {
  ParamSet ps;
  ps.add("eps.time", init_normal(Shape{cfg_.max_timestep, cfg_.time_dim}, 0.02, rng));
  add_affine(ps, "eps.l1", cfg_.input_dim(), cfg_.hidden, rng);
  add_affine(ps, "eps.l2", cfg_.hidden, cfg_.hidden, rng);
  add_affine(ps, "eps.l3", cfg_.hidden, cfg_.x_dim(), rng);
  return ps;
}

Var EpsNet::forward(const BoundParams& p, Var x_k, std::span<const Condition> y,
                    std::span<const std::size_t> k) const {
  const std::size_t B = x_k.rows();
  const std::size_t L = cfg_.prompt_len;
  if (x_k.cols() != cfg_.x_dim()) {
    throw std::invalid_argument("eps_net: input width " + std::to_string(x_k.cols()) + ", expected " +
                                std::to_string(cfg_.x_dim()));
  }
  if (y.size() != B || k.size() != B) throw std::invalid_argument("eps_net: batch mismatch between x, y and k");
  Graph& g = p.graph();

  Tensor rtg(Shape{B, L});
  Tensor steps(Shape{B, cfg_.step_dim});
  Tensor avg(Shape{B, B * L}, 0.0);
  std::vector<std::size_t> ids;
  ids.reserve(B * L);
  for (std::size_t b = 0; b < B; ++b) {
    if (y[b].rtg.size() != L || y[b].timesteps.size() != L) throw std::invalid_argument("eps_net: condition length");
    for (std::size_t j = 0; j < L; ++j) {
      rtg.at(b, j) = y[b].rtg[j];
      if (y[b].timesteps[j] >= cfg_.max_timestep) throw std::out_of_range("eps_net: condition timestep too large");
      ids.push_back(y[b].timesteps[j]);
      avg.at(b, b * L + j) = 1.0 / static_cast<double>(L);
    }
    const auto s = sinusoidal_embedding(k[b], cfg_.step_dim);
    std::copy(s.begin(), s.end(), steps.data() + b * cfg_.step_dim);
  }
  Var time = matmul(g.constant(std::move(avg)), embedding(p["eps.time"], ids));
  Var h = concat_cols({x_k, g.constant(std::move(rtg)), time, g.constant(std::move(steps))});
  h = mish(affine(h, p["eps.l1.w"], p["eps.l1.b"]));
  h = mish(affine(h, p["eps.l2.w"], p["eps.l2.b"]));
  return affine(h, p["eps.l3.w"], p["eps.l3.b"]);
}

Tensor EpsNet::predict(const ParamSet& params, const Tensor& x_k, std::span<const Condition> y,
                       std::span<const std::size_t> k) const {
  Graph g;
  BoundParams p(g, params, false);
  return forward(p, g.constant(x_k), y, k).value();
}

EpsPredictor bind_predictor(const EpsNet& net, const BoundParams& p) {
  return [&net, &p](Var x_k, std::span<const Condition> y, std::span<const std::size_t> k) {
    return net.forward(p, x_k, y, k);
  };
}

}  // namespace pdiff
