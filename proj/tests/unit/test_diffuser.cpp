#include <doctest.h>

#include <cmath>

#include "pdiff/harness.hpp"
#include "support.hpp"

using namespace pdiff;
using pdiff::testing::max_rel_error;
using pdiff::testing::random_tensor;

namespace {

EpsNetConfig tiny_net() {
  EpsNetConfig c;
  c.prompt_len = 1;
  c.hidden = 8;
  c.time_dim = 4;
  c.step_dim = 4;
  return c;
}

Condition random_condition(std::size_t len, Rng& rng) {
  Condition y;
  for (std::size_t j = 0; j < len; ++j) {
    y.rtg.push_back(uniform(rng, -1, 1));
    y.timesteps.push_back(uniform_index(rng, kHorizon));
  }
  return y;
}

/// Predictor that ignores its input and returns `value`.
EpsPredictor constant_predictor(const Tensor& value) {
  return [value](Var x, std::span<const Condition>, std::span<const std::size_t>) {
    return x.graph->constant(value);
  };
}

}  // namespace

TEST_CASE("schedule values") {
  const NoiseSchedule one = make_schedule(1);
  CHECK(one.beta_at(1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(one.alpha_bar_at(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(one.alpha_bar_at(0) == 1.0);

  const NoiseSchedule s = make_schedule(100);
  double prod = 1.0;
  for (std::size_t k = 1; k <= 100; ++k) {
    const double beta = std::min(1e-4 * 10.0 + (0.02 * 10.0 - 1e-4 * 10.0) * static_cast<double>(k - 1) / 99.0, 0.999);
    CHECK(std::abs(s.beta_at(k) - beta) < 1e-15);
    prod *= 1.0 - beta;
    if (k > 1) CHECK(s.alpha_bar_at(k) < s.alpha_bar_at(k - 1));
  }
  CHECK(std::abs(s.alpha_bar_at(100) - prod) < 1e-15);

  const NoiseSchedule twenty = make_schedule(20);
  for (double b : twenty.beta) CHECK(b < 1.0);
  CHECK_THROWS(make_schedule(0));
}

TEST_CASE("forward noising") {
  Rng rng(1);
  const NoiseSchedule s = make_schedule(20);
  const Tensor x0 = random_tensor({1, 10}, rng);
  const Tensor zero(Shape{1, 10});
  const Tensor xk = q_sample(x0, 7, zero, s);
  for (std::size_t i = 0; i < 10; ++i) CHECK(xk[i] == doctest::Approx(std::sqrt(s.alpha_bar_at(7)) * x0[i]));

  NoiseSchedule identity;
  identity.steps = 1;
  identity.beta = {0.0};
  identity.alpha = {1.0};
  identity.alpha_bar = {1.0};
  CHECK(q_sample(x0, 1, random_tensor({1, 10}, rng), identity) == x0);
  CHECK_THROWS(q_sample(x0, 21, zero, s));
}

TEST_CASE("forward noising moments") {
  Rng rng(2);
  const NoiseSchedule s = make_schedule(20);
  const std::size_t k = 9;
  const Tensor x0 = random_tensor({1, 5}, rng);
  const int n = 10000;
  std::vector<double> m(5, 0.0), sq(5, 0.0);
  for (int i = 0; i < n; ++i) {
    Tensor eps(Shape{1, 5});
    for (double& e : eps.values()) e = normal(rng);
    const Tensor xk = q_sample(x0, k, eps, s);
    for (std::size_t j = 0; j < 5; ++j) {
      m[j] += xk[j] / n;
      sq[j] += xk[j] * xk[j] / n;
    }
  }
  const double var = 1.0 - s.alpha_bar_at(k);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(std::abs(m[j] - std::sqrt(s.alpha_bar_at(k)) * x0[j]) < 3.0 * std::sqrt(var / n));
    CHECK(std::abs((sq[j] - m[j] * m[j]) / var - 1.0) < 0.05);
  }
}

TEST_CASE("prompt tensor layout") {
  const Trajectory ep = collect(make_task(Family::Dir2d, 3), Tier::Medium, 1, 4)[0].window(6, 5);
  const Tensor x = to_prompt_tensor(ep);
  CHECK(x.size() == prompt_dim(5));
  CHECK(x[0 * 5 + 2] == ep.states[2][0]);
  CHECK(x[1 * 5 + 4] == ep.states[4][1]);
  CHECK(x[3 * 5 + 1] == ep.actions[1][1]);
  CHECK(x[4 * 5 + 3] == ep.rewards[3]);
  const Condition y = condition_of(ep);
  CHECK(y.rtg == ep.rtg);
  CHECK(y.timesteps == ep.timesteps);
  CHECK(from_prompt_tensor(x.values(), y) == ep);
}

TEST_CASE("noise predictor shape, step sensitivity and gradients") {
  for (std::size_t len : {1u, 3u, 5u}) {
    EpsNetConfig c = tiny_net();
    c.prompt_len = len;
    const EpsNet net(c);
    Rng rng(len);
    const ParamSet p = net.init(rng);
    const std::vector<Condition> y{random_condition(len, rng), random_condition(len, rng)};
    const std::vector<std::size_t> k{3, 3};
    const Tensor out = net.predict(p, random_tensor({2, c.x_dim()}, rng), y, k);
    CHECK(out.rows() == 2);
    CHECK(out.cols() == prompt_dim(len));
  }

  const EpsNet net(tiny_net());
  for (int s = 0; s < 10; ++s) {
    Rng rng(30 + s);
    const ParamSet p = net.init(rng);
    const Tensor x = random_tensor({1, 5}, rng);
    const std::vector<Condition> y{random_condition(1, rng)};
    const std::vector<std::size_t> k1{1}, k2{2};
    CHECK_FALSE(net.predict(p, x, y, k1) == net.predict(p, x, y, k2));
  }

  for (int s = 0; s < 20; ++s) {
    CAPTURE(s);
    Rng rng(60 + s);
    const ParamSet p = net.init(rng);
    const Tensor x = random_tensor({3, 5}, rng);
    const std::vector<Condition> y{random_condition(1, rng), random_condition(1, rng), random_condition(1, rng)};
    const std::vector<std::size_t> k{1, 7, 20};
    CHECK(max_rel_error(
              [&](Graph& g, const BoundParams& bp) {
                return pdiff::testing::weighted_sum(net.forward(bp, g.constant(x), y, k), 99 + s);
              },
              p) < 1e-4);
  }
}

TEST_CASE("finite differences: denoising loss with pinned noise") {
  const EpsNet net(tiny_net());
  const NoiseSchedule sched = make_schedule(20);
  const auto data = collect(make_task(Family::Vel, 9), Tier::Expert, 2, 1);
  const NormStats st = fit_norm_stats(data);
  std::vector<Trajectory> segs;
  Rng drng(3);
  for (int i = 0; i < 4; ++i) segs.push_back(normalize(sample_prompt(data, 1, drng), st));
  const DiffusionBatch batch = DiffusionBatch::from_segments(segs);
  for (int s = 0; s < 20; ++s) {
    CAPTURE(s);
    Rng rng(90 + s);
    const ParamSet p = net.init(rng);
    const DmNoise noise = draw_dm_noise(4, 5, sched, rng);
    CHECK(max_rel_error(
              [&](Graph& g, const BoundParams& bp) { return loss_dm(g, bind_predictor(net, bp), batch, sched, noise); },
              p) < 1e-4);
  }
}

TEST_CASE("denoising loss with stub predictors") {
  const NoiseSchedule sched = make_schedule(20);
  Rng rng(4);
  const std::size_t n = 2000, d = 5;
  DiffusionBatch batch;
  batch.x0 = random_tensor({n, d}, rng);
  batch.cond.assign(n, Condition{{0.0}, {0}});
  const DmNoise noise = draw_dm_noise(n, d, sched, rng);
  Graph g;
  CHECK(loss_dm(g, constant_predictor(noise.eps), batch, sched, noise).value().item() == 0.0);
  const double zero_pred = loss_dm(g, constant_predictor(Tensor(Shape{n, d})), batch, sched, noise).value().item();
  CHECK(std::abs(zero_pred - 1.0) < 0.05);
}

TEST_CASE("denoising loss falls on a fixed dataset") {
  const EpsNet net(EpsNetConfig{.prompt_len = 2, .hidden = 32});
  const NoiseSchedule sched = make_schedule(20);
  const auto data = collect(make_task(Family::Dir2d, 4), Tier::Expert, 2, 7);
  const NormStats st = fit_norm_stats(data);
  std::vector<Trajectory> prompts;
  Rng drng(5);
  for (int i = 0; i < 8; ++i) prompts.push_back(normalize(sample_prompt(data, 2, drng), st));
  GuidanceConfig cfg;
  cfg.optim.lr = 1e-3;
  cfg.batch = 8;
  Rng rng(6);
  DiffuserState state{net.init(rng), {}};
  state.optim = AdamWState::for_params(state.theta, cfg.optim);
  double head = 0.0, tail = 0.0;
  for (int it = 0; it < 1000; ++it) {
    const double l = dm_step(state, net, prompts, cfg, sched, rng).loss_dm;
    if (it < 100) head += l;
    if (it >= 900) tail += l;
  }
  CHECK(tail < head);
}

TEST_CASE("posterior mean") {
  const NoiseSchedule s = make_schedule(20);
  Rng rng(7);
  const Tensor x0 = random_tensor({2, 5}, rng);
  Tensor eps(Shape{2, 5});
  for (double& e : eps.values()) e = normal(rng);

  const Tensor xk = q_sample(x0, 5, eps, s);
  const Tensor m0 = p_mean(xk, Tensor(Shape{2, 5}), 5, s);
  for (std::size_t i = 0; i < 10; ++i) CHECK(m0[i] == doctest::Approx(xk[i] / std::sqrt(s.alpha_at(5))));

  const Tensor x1 = q_sample(x0, 1, eps, s);
  const Tensor m1 = p_mean(x1, eps, 1, s);
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(m1[i] - x0[i]) < 1e-12);

  for (std::size_t k = 2; k <= 20; ++k) {
    const Tensor x = q_sample(x0, k, eps, s);
    const Tensor m = p_mean(x, eps, k, s);
    const double ab = s.alpha_bar_at(k), abp = s.alpha_bar_at(k - 1);
    for (std::size_t i = 0; i < 10; ++i) {
      const double ref = std::sqrt(abp) * s.beta_at(k) / (1.0 - ab) * x0[i] +
                         std::sqrt(s.alpha_at(k)) * (1.0 - abp) / (1.0 - ab) * x[i];
      CHECK(std::abs(m[i] - ref) < 1e-9);
      CHECK(std::isfinite(m[i]));
    }
  }
}

TEST_CASE("ancestral sampling contracts") {
  const EpsNet net(tiny_net());
  const NoiseSchedule sched = make_schedule(20);
  Rng rng(8);
  const ParamSet p = net.init(rng);
  const std::vector<Condition> y{random_condition(1, rng), random_condition(1, rng)};
  ChainNoise noise = draw_chain_noise(2, 5, sched, rng);
  const Tensor a = sample_chain(net, p, y, sched, 0.0, noise);
  for (auto& z : noise.z) z.fill(3.0);
  CHECK(sample_chain(net, p, y, sched, 0.0, noise) == a);
  for (int i = 0; i < 20; ++i) {
    const Tensor x = sample_chain(net, p, y, sched, 0.5, rng);
    for (double v : x.values()) CHECK(std::abs(v) <= 1.0);
  }
  CHECK_THROWS(sample_chain(net, p, y, sched, 1.0, rng));
}

TEST_CASE("sampling recovers an overfit singleton") {
  const EpsNet net(EpsNetConfig{.prompt_len = 1, .hidden = 64});
  const NoiseSchedule sched = make_schedule(20);
  Trajectory x0 = collect(make_task(Family::Dir2d, 7), Tier::Expert, 1, 1)[0].window(10, 1);
  x0.states[0] = {0.4, -0.3};
  x0.actions[0] = {0.7, -0.6};
  x0.rewards[0] = 0.2;
  x0.rtg[0] = 0.5;
  const std::vector<Trajectory> data{x0};
  GuidanceConfig cfg;
  cfg.optim.lr = 1e-3;
  cfg.optim.weight_decay = 0.0;
  cfg.grad_clip = 1.0;
  cfg.batch = 64;
  Rng rng(9);
  DiffuserState state{net.init(rng), {}};
  state.optim = AdamWState::for_params(state.theta, cfg.optim);
  for (int it = 0; it < 3000; ++it) dm_step(state, net, data, cfg, sched, rng);

  const Tensor target = to_prompt_tensor(x0);
  const std::vector<Condition> y{condition_of(x0)};
  double mean_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Tensor x = sample_chain(net, state.theta, y, sched, 0.1, rng);
    double e = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) e = std::max(e, std::abs(x[j] - target[j]));
    mean_err += e / 100.0;
  }
  CHECK(mean_err < 0.15);
}

TEST_CASE("two-phase training") {
  ExperimentConfig cfg = ExperimentConfig::desk();
  cfg.prompt_episodes = 4;
  cfg.history_episodes = 2;
  const FamilyBundle b = build_family(Family::Dir1d, default_split(Family::Dir1d), cfg);
  GuidanceConfig g = guidance_for_seed(cfg, 0);
  g.pretrain_iterations = 400;
  g.finetune_iterations = 2;
  g.history_batch = 2;
  PLMConfig pc = cfg.pretrain.model;
  pc.layers = 1;
  pc.width = 8;
  Rng rng(1);
  const ParamSet plm_params = init_plm(pc, rng);
  const FrozenPLM plm{&plm_params, pc};

  const DiffuserResult zero = train_prompt_diffuser(b.train, nullptr, plm, g);
  CHECK(zero.zero_shot);
  CHECK(zero.phase2.empty());
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    head += zero.phase1_losses[i];
    tail += zero.phase1_losses[zero.phase1_losses.size() - 1 - i];
  }
  CHECK(tail < head);
  const EpsNet net(g.net);
  const std::vector<Condition> y{condition_of(b.train[0].prompts[0].window(0, 5))};
  const Tensor x = sample_chain(net, zero.theta, y, make_schedule(g.diffusion_steps), g.temperature, rng);
  CHECK(x.all_finite());

  const TaskData few = b.fewshot_task(0, Tier::Expert);
  const DiffuserResult a = train_prompt_diffuser(b.train, &few, plm, g);
  const DiffuserResult c = train_prompt_diffuser(b.train, &few, plm, g);
  CHECK(a.theta == c.theta);
  CHECK(a.phase2.size() == 2);
  CHECK_FALSE(a.zero_shot);
}
