#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "pdiff/datasets.hpp"

using namespace pdiff;

TEST_CASE("task goals") {
  CHECK(make_task(Family::Vel, 39).goal == doctest::Approx(3.0));
  CHECK(make_task(Family::Vel, 0).goal == 0.0);
  CHECK(make_task(Family::Dir2d, 25).goal == doctest::Approx(std::numbers::pi));
  CHECK(make_task(Family::Dir1d, 0).goal == 1.0);
  CHECK(make_task(Family::Dir1d, 1).goal == -1.0);
  CHECK_THROWS_AS(make_task(Family::Dir1d, 2), std::out_of_range);
  CHECK(task_count(Family::Vel) == 40);
  CHECK(task_count(Family::Dir2d) == 50);
}

TEST_CASE("single step arithmetic") {
  EnvState s;
  const StepResult r = step(make_task(Family::Dir1d, 0), s, {1.0, 0.0});
  CHECK(r.state.velocity[0] == doctest::Approx(0.1));
  CHECK(r.state.velocity[1] == 0.0);
  CHECK(r.reward == doctest::Approx(0.1));
  CHECK(r.state.t == 1);

  CHECK(step(make_task(Family::Vel, 0), s, {0.0, 0.0}).reward == 0.0);
  const TaskSpec north{Family::Dir2d, 0, std::numbers::pi / 2};
  CHECK(reward_for(north, {0.1, 0.3}) == doctest::Approx(0.3));
}

TEST_CASE("dynamics clamp actions and speed") {
  EnvState s;
  s.velocity = {1.95, -1.95};
  const StepResult r = step(make_task(Family::Dir2d, 0), s, {5.0, -5.0});
  CHECK(r.state.velocity[0] == doctest::Approx(std::min(0.9 * 1.95 + 0.1, 2.0)));
  CHECK(r.state.velocity[1] == doctest::Approx(-(0.9 * 1.95 + 0.1)));
  s.t = kHorizon;
  CHECK_THROWS(step(make_task(Family::Dir2d, 0), s, {0, 0}));
}

TEST_CASE("reset") {
  const TaskSpec t = make_task(Family::Vel, 3);
  const EnvState a = reset(t, 42), b = reset(t, 42);
  CHECK(a.position == b.position);
  CHECK(a.velocity == Vec2{0.0, 0.0});
  CHECK(observe(a) == Vec2{0.0, 0.0});
  int differ = 0;
  for (std::uint64_t s = 0; s < 100; ++s) differ += reset(t, 2 * s).position != reset(t, 2 * s + 1).position;
  CHECK(differ >= 99);
}

TEST_CASE("scripted policies") {
  Rng rng(1);
  EnvState s;
  s.velocity = {0.4, -0.2};
  for (int i = 0; i < 10; ++i) CHECK(scripted_policy(make_task(Family::Dir1d, 0), Tier::Expert, s, rng) == Vec2{1.0, 0.0});

  double mx = 0.0, my = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Vec2 a = scripted_policy(make_task(Family::Vel, 5), Tier::Random, s, rng);
    mx += a[0] / n;
    my += a[1] / n;
  }
  CHECK(std::abs(mx) < 0.05);
  CHECK(std::abs(my) < 0.05);

  for (Family f : {Family::Dir1d, Family::Vel, Family::Dir2d}) {
    CAPTURE(to_string(f));
    const TaskSpec t = make_task(f, f == Family::Dir1d ? 1 : 11);
    CHECK(mean_return(collect(t, Tier::Expert, 50, 3)) > mean_return(collect(t, Tier::Random, 50, 3)));
  }
}

TEST_CASE("collect") {
  const TaskSpec t = make_task(Family::Dir2d, 9);
  const auto a = collect(t, Tier::Medium, 3, 11);
  REQUIRE(a.size() == 3);
  for (const auto& tr : a) {
    CHECK(tr.length() == static_cast<std::size_t>(kHorizon));
    CHECK(tr.states.size() == tr.length());
    CHECK(tr.timesteps.front() == 0);
    CHECK(tr.timesteps.back() == static_cast<std::size_t>(kHorizon - 1));
    CHECK(tr.states.front() == Vec2{0.0, 0.0});
  }
  CHECK(collect(t, Tier::Medium, 3, 11) == a);
  const TaskSpec d = make_task(Family::Dir1d, 0);
  CHECK(mean_return(collect(d, Tier::Expert, 50, 1)) > mean_return(collect(d, Tier::Random, 50, 1)));
}

TEST_CASE("return-to-go") {
  CHECK(compute_rtg(std::vector<double>{1, 2, 3}) == std::vector<double>{6, 5, 3});
  CHECK(compute_rtg(std::vector<double>{0, 0}) == std::vector<double>{0, 0});
  Rng rng(4);
  std::vector<double> r(50);
  for (double& v : r) v = uniform(rng, -1, 1);
  std::vector<double> rev(r.rbegin(), r.rend()), csum;
  double acc = 0.0;
  for (double v : rev) csum.push_back(acc += v);
  std::reverse(csum.begin(), csum.end());
  CHECK(compute_rtg(r) == csum);
}

TEST_CASE("channel normalisation") {
  const ChannelRange c{0.0, 3.0};
  CHECK(c.normalize(3.0) == 1.0);
  CHECK(c.normalize(0.0) == -1.0);
  CHECK(c.normalize(1.5) == 0.0);
  const ChannelRange k{7.0, 7.0};
  CHECK(k.degenerate());
  CHECK(k.normalize(7.0) == 0.0);
  CHECK(k.denormalize(0.0) == 7.0);

  const auto data = collect(make_task(Family::Vel, 20), Tier::Medium, 5, 2);
  const NormStats st = fit_norm_stats(data);
  double worst = 0.0;
  for (const auto& tr : data) {
    const Trajectory n = normalize(tr, st);
    const Trajectory back = denormalize(n, st);
    CHECK(n.timesteps == tr.timesteps);
    for (std::size_t t = 0; t < tr.length(); ++t) {
      worst = std::max({worst, std::abs(back.rewards[t] - tr.rewards[t]), std::abs(back.rtg[t] - tr.rtg[t]),
                        std::abs(back.states[t][0] - tr.states[t][0]), std::abs(back.actions[t][1] - tr.actions[t][1])});
      CHECK(std::abs(n.states[t][0]) <= 1.0 + 1e-12);
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("prompt windows") {
  const auto data = collect(make_task(Family::Vel, 8), Tier::Expert, 1, 5);
  Rng rng(8);
  const Trajectory whole = sample_prompt(data, kHorizon, rng);
  CHECK(whole == data[0]);
  const Trajectory w = sample_prompt(data, 5, rng);
  REQUIRE(w.length() == 5);
  for (std::size_t i = 1; i < 5; ++i) CHECK(w.timesteps[i] == w.timesteps[i - 1] + 1);

  const std::size_t starts = kHorizon - 5 + 1;
  std::vector<double> counts(starts, 0.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) counts[sample_prompt(data, 5, rng).timesteps[0]] += 1.0;
  double chi2 = 0.0;
  const double expect = static_cast<double>(n) / starts;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
  // 0.99 quantile of chi-square with 45 degrees of freedom.
  CHECK(chi2 < 69.96);
}

TEST_CASE("history batches stay inside one episode") {
  std::vector<Trajectory> data;
  for (int e = 0; e < 4; ++e) {
    Trajectory t = collect(make_task(Family::Dir2d, 3), Tier::Random, 1, e)[0];
    for (std::size_t i = 0; i < t.length(); ++i) t.rewards[i] = 1000.0 * e + static_cast<double>(i);
    data.push_back(t);
  }
  Rng rng(12);
  const auto one = sample_history_batch(data, 1, 32, rng);
  CHECK(one.size() == 32);
  for (const auto& w : one) CHECK(w.length() == 1);
  for (const auto& w : sample_history_batch(data, 10, 200, rng)) {
    const int episode = static_cast<int>(w.rewards[0] / 1000.0);
    for (std::size_t i = 0; i < w.length(); ++i) {
      CHECK(static_cast<int>(w.rewards[i] / 1000.0) == episode);
      CHECK(w.rewards[i] - 1000.0 * episode == static_cast<double>(w.timesteps[i]));
      if (i) CHECK(w.timesteps[i] == w.timesteps[i - 1] + 1);
    }
  }
}

TEST_CASE("dataset round trip") {
  Dataset ds;
  ds.header.family = Family::Dir2d;
  ds.header.task_index = 17;
  ds.header.tier = "medium";
  ds.header.seed = 123456789012345ULL;
  ds.trajectories = collect(make_task(Family::Dir2d, 17), Tier::Medium, 2, 4);
  ds.header.stats = fit_norm_stats(ds.trajectories);
  std::stringstream ss;
  write_dataset(ss, ds);
  const Dataset back = read_dataset(ss);
  CHECK(back == ds);
  CHECK(dataset_filename(Family::Vel, 3, "expert") == "vel_task03_expert.jsonl");

  std::stringstream broken("{\"format_version\": 99}\n");
  CHECK_THROWS(read_dataset(broken));
}
