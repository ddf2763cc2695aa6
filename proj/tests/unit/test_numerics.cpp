#include <doctest.h>

#include <sstream>

#include "pdiff/attention.hpp"
#include "pdiff/checkpoint.hpp"
#include "pdiff/optim.hpp"
#include "support.hpp"

using namespace pdiff;
using pdiff::testing::max_rel_error;
using pdiff::testing::params_of;
using pdiff::testing::random_tensor;
using pdiff::testing::weighted_sum;

namespace {

constexpr int kSeeds = 20;
constexpr double kTol = 1e-4;

Tensor away_from(Tensor t, double bound, double gap) {
  for (double& v : t.values()) {
    if (std::abs(std::abs(v) - bound) < gap) v = std::copysign(bound + 2 * gap, v);
  }
  return t;
}

}  // namespace

TEST_CASE("affine examples and triple-loop oracle") {
  Graph g;
  Var y = affine(g.constant(Tensor::matrix({{1, 2}})), g.constant(Tensor::matrix({{1, 0}, {0, 1}})),
                 g.constant(Tensor::vector({0, 0})));
  CHECK(y.value() == Tensor::matrix({{1, 2}}));
  Var z = affine(g.constant(Tensor::matrix({{1, 1}})), g.constant(Tensor::matrix({{2}, {3}})),
                 g.constant(Tensor::vector({1})));
  CHECK(z.value().item() == 6.0);

  Rng rng(7);
  const Tensor a = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
  const Tensor out = affine(g.constant(a), g.constant(w), g.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double ref = b[j];
      for (std::size_t k = 0; k < 4; ++k) ref += a.at(i, k) * w.at(k, j);
      CHECK(std::abs(out.at(i, j) - ref) < 1e-12);
    }
}

TEST_CASE("grad of simple polynomials") {
  const ParamSet ps = params_of({{"p", Tensor::scalar(3.0)}, {"q", Tensor::vector({1, 2})}});
  const ParamSet g = grad([](Graph&, const BoundParams& p) { return sum(mul(p["p"], p["p"])); }, ps);
  CHECK(g["p"].item() == doctest::Approx(6.0));
  CHECK(g["q"] == Tensor::vector({0, 0}));
}

TEST_CASE("finite differences: matrix and elementwise primitives") {
  for (int s = 0; s < kSeeds; ++s) {
    CAPTURE(s);
    Rng rng(100 + s);
    const ParamSet ps = params_of({{"a", random_tensor({3, 4}, rng)},
                                   {"b", random_tensor({3, 4}, rng)},
                                   {"w", random_tensor({4, 5}, rng)},
                                   {"bias", random_tensor({5}, rng)},
                                   {"row", random_tensor({1, 4}, rng)}});
    const std::uint64_t r = 1000 + s;
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(matmul(p["a"], p["w"]), r); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(affine(p["a"], p["w"], p["bias"]), r); },
                        ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(add(p["a"], p["b"]), r); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(sub(p["a"], p["b"]), r); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(mul(p["a"], p["b"]), r); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(scale(p["a"], -1.7), r); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(add_scalar(p["a"], 0.3), r); }, ps) <
          kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(add_bias(p["a"], p["row"]), r); }, ps) <
          kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(repeat_rows(p["row"], 3), r); }, ps) <
          kTol);
  }
}

TEST_CASE("finite differences: activations and normalisation") {
  for (int s = 0; s < kSeeds; ++s) {
    CAPTURE(s);
    Rng rng(200 + s);
    const ParamSet ps = params_of({{"x", random_tensor({4, 6}, rng, -3.0, 3.0)},
                                   {"c", away_from(random_tensor({4, 6}, rng, -2.0, 2.0), 1.0, 1e-3)},
                                   {"gamma", random_tensor({6}, rng, 0.5, 1.5)},
                                   {"beta", random_tensor({6}, rng)}});
    const std::uint64_t r = 2000 + s;
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(mish(p["x"]), r); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(gelu(p["x"]), r); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(tanh(p["x"]), r); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(clamp(p["c"], -1.0, 1.0), r); }, ps) <
          kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(softmax_rows(p["x"]), r); }, ps) < kTol);
    CHECK(max_rel_error(
              [r](Graph&, const BoundParams& p) { return weighted_sum(layer_norm(p["x"], p["gamma"], p["beta"]), r); },
              ps) < kTol);
    CHECK(max_rel_error(
              [r, s](Graph&, const BoundParams& p) {
                Rng mask(s);
                return weighted_sum(dropout(p["x"], 0.3, mask), r);
              },
              ps) < kTol);
  }
}

TEST_CASE("finite differences: reductions and layout") {
  const std::vector<std::size_t> ids{2, 0, 2, 1};
  const std::vector<std::size_t> rows{3, 3, 0};
  for (int s = 0; s < kSeeds; ++s) {
    CAPTURE(s);
    Rng rng(300 + s);
    const ParamSet ps = params_of({{"x", random_tensor({4, 3}, rng)},
                                   {"y", random_tensor({4, 3}, rng)},
                                   {"z", random_tensor({4, 2}, rng)},
                                   {"table", random_tensor({3, 5}, rng)}});
    const std::uint64_t r = 3000 + s;
    CHECK(max_rel_error([](Graph&, const BoundParams& p) { return sum(mul(p["x"], p["y"])); }, ps) < kTol);
    CHECK(max_rel_error([](Graph&, const BoundParams& p) { return mean(mul(p["x"], p["x"])); }, ps) < kTol);
    CHECK(max_rel_error([](Graph&, const BoundParams& p) { return mse(p["x"], p["y"]); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(mean_rows(p["x"]), r); }, ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(reshape(p["x"], {2, 6}), r); }, ps) <
          kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(concat_cols({p["x"], p["z"]}), r); },
                        ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(concat_rows({p["x"], p["y"]}), r); },
                        ps) < kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(slice_cols(p["x"], 1, 2), r); }, ps) <
          kTol);
    CHECK(max_rel_error([r](Graph&, const BoundParams& p) { return weighted_sum(slice_rows(p["x"], 1, 2), r); }, ps) <
          kTol);
    CHECK(max_rel_error([r, &rows](Graph&, const BoundParams& p) { return weighted_sum(gather_rows(p["x"], rows), r); },
                        ps) < kTol);
    CHECK(max_rel_error([r, &ids](Graph&, const BoundParams& p) { return weighted_sum(embedding(p["table"], ids), r); },
                        ps) < kTol);
  }
}

TEST_CASE("finite differences: causal attention, 4 tokens, width 8") {
  for (int s = 0; s < kSeeds; ++s) {
    CAPTURE(s);
    Rng rng(400 + s);
    ParamSet ps;
    ps.add("x", random_tensor({4, 8}, rng));
    add_attention_params(ps, "att", 8, rng);
    const std::uint64_t r = 4000 + s;
    for (std::size_t heads : {1u, 2u}) {
      CHECK(max_rel_error(
                [r, heads](Graph&, const BoundParams& p) {
                  return weighted_sum(causal_attention(p["x"], attention_weights(p, "att"), 1, 4, heads), r);
                },
                ps) < kTol);
    }
  }
}

TEST_CASE("attention over one token is the projected value") {
  Rng rng(5);
  ParamSet ps;
  add_attention_params(ps, "att", 6, rng);
  const Tensor x = random_tensor({1, 6}, rng);
  Graph g;
  BoundParams p(g, ps, false);
  const AttentionWeights w = attention_weights(p, "att");
  const Var out = causal_attention(g.constant(x), w, 1, 1, 2);
  const Var ref = affine(affine(g.constant(x), w.wv, w.bv), w.wo, w.bo);
  for (std::size_t i = 0; i < 6; ++i) CHECK(out.value()[i] == doctest::Approx(ref.value()[i]).epsilon(1e-12));
}

TEST_CASE("attention is causal") {
  Rng rng(6);
  ParamSet ps;
  add_attention_params(ps, "att", 8, rng);
  Tensor x = random_tensor({5, 8}, rng);
  auto run = [&](const Tensor& in) {
    Graph g;
    BoundParams p(g, ps, false);
    return causal_attention(g.constant(in), attention_weights(p, "att"), 1, 5, 2).value();
  };
  const Tensor before = run(x);
  for (std::size_t c = 0; c < 8; ++c) x.at(3, c) += 0.5;
  const Tensor after = run(x);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 8; ++c) CHECK(before.at(t, c) == after.at(t, c));
  CHECK(before.at(3, 0) != after.at(3, 0));
}

TEST_CASE("adamw first step and passthrough") {
  ParamSet ps = params_of({{"p", Tensor::scalar(0.0)}});
  AdamWConfig cfg{.lr = 1e-3, .beta1 = 0.9, .beta2 = 0.95, .eps = 1e-8, .weight_decay = 0.0};
  AdamWState st = AdamWState::for_params(ps, cfg);
  adamw_step(ps, params_of({{"p", Tensor::scalar(1.0)}}), st);
  CHECK(ps["p"].item() == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-14));

  ParamSet still = params_of({{"p", Tensor::vector({0.3, -2.0})}});
  AdamWState st2 = AdamWState::for_params(still, cfg);
  const ParamSet before = still;
  adamw_step(still, still.zeros_like(), st2);
  CHECK(still == before);
}

TEST_CASE("adamw three-step trace matches a scalar reference") {
  const AdamWConfig cfg{.lr = 0.1, .beta1 = 0.9, .beta2 = 0.95, .eps = 1e-8, .weight_decay = 0.01};
  ParamSet ps = params_of({{"p", Tensor::scalar(2.0)}});
  AdamWState st = AdamWState::for_params(ps, cfg);
  double x = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = 2.0 * (x - 0.5);
    adamw_step(ps, params_of({{"p", Tensor::scalar(2.0 * (ps["p"].item() - 0.5))}}), st);
    m = 0.9 * m + 0.1 * g;
    v = 0.95 * v + 0.05 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.95, t));
    x = x - 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * x);
    CHECK(std::abs(ps["p"].item() - x) < 1e-12);
  }
}

TEST_CASE("global norm clipping") {
  ParamSet g = params_of({{"g", Tensor::vector({3, 4})}});
  CHECK(clip_global_norm(g, 0.25) == doctest::Approx(5.0));
  CHECK(g["g"][0] == doctest::Approx(0.15).epsilon(1e-14));
  CHECK(g["g"][1] == doctest::Approx(0.20).epsilon(1e-14));

  ParamSet small = params_of({{"g", Tensor::vector({0.01, -0.02})}});
  const ParamSet copy = small;
  clip_global_norm(small, 0.25);
  CHECK(small == copy);

  Rng rng(9);
  for (int s = 0; s < 50; ++s) {
    ParamSet r = params_of({{"a", random_tensor({3, 3}, rng)}, {"b", random_tensor({7}, rng)}});
    const double n = global_norm(r);
    double sq = 0.0;
    for (const auto& [name, t] : r)
      for (double v : t.values()) sq += v * v;
    CHECK(std::abs(n - std::sqrt(sq)) < 1e-12);
    clip_global_norm(r, 0.5);
    CHECK(std::abs(global_norm(r) - std::min(n, 0.5)) < 1e-12);
  }
}

TEST_CASE("checkpoint round trip preserves names, order and bits") {
  Rng rng(3);
  ParamSet ps;
  ps.add("z.last", random_tensor({2, 3}, rng));
  ps.add("a.first", random_tensor({5}, rng));
  ps.add("scalar", Tensor::scalar(-0.0));
  std::stringstream ss;
  write_checkpoint(ss, ps);
  const ParamSet back = read_checkpoint(ss);
  CHECK(back == ps);
  CHECK(back.names() == ps.names());

  std::stringstream bad("NOPE");
  CHECK_THROWS(read_checkpoint(bad));
}
