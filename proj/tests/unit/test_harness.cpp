#include <doctest.h>

#include <cmath>
#include <sstream>

#include "pdiff/harness.hpp"
#include "support.hpp"
#include "tiny_config.hpp"

using namespace pdiff;
using pdiff::testing::random_tensor;
using pdiff::testing::tiny_experiment;

namespace {

const FamilyBundle& dir1d() {
  static const FamilyBundle b = build_family(Family::Dir1d, default_split(Family::Dir1d), tiny_experiment());
  return b;
}

}  // namespace

TEST_CASE("configuration text") {
  const ExperimentConfig desk = ExperimentConfig::desk();
  const ExperimentConfig back = ExperimentConfig::parse(desk.canonical(), ExperimentConfig{});
  CHECK(back.canonical() == desk.canonical());
  CHECK(back.digest() == desk.digest());
  CHECK(desk.digest() != ExperimentConfig{}.digest());
  CHECK(desk.digest().size() == 16);

  const ExperimentConfig o = ExperimentConfig::parse(R"({"diffuser": {"lambda": 2.5}, "seeds": [4]})", desk);
  CHECK(o.guidance.lambda == 2.5);
  CHECK(o.seeds == std::vector<std::uint64_t>{4});
  CHECK(o.pretrain.iterations == desk.pretrain.iterations);

  CHECK_THROWS(ExperimentConfig::parse(R"({"diffuser": {"lamda": 1}})", desk));
  CHECK_THROWS(ExperimentConfig::parse(R"({"optimizer": {}})", desk));
  CHECK_THROWS(ExperimentConfig::parse(R"({"diffuser": {"lambda": 7}})", desk));
  CHECK_THROWS(ExperimentConfig::parse("{", desk));

  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("csv round trip") {
  CsvTable t{{"name", "note", "value"}, {}};
  t.add({"plain", "has,comma", "1"});
  t.add({"quote", "say \"hi\"", ""});
  t.add({"line", "two\nlines", fmt_real(0.1)});
  std::stringstream ss;
  write_csv(ss, t);
  CHECK(read_csv(ss) == t);
  CHECK(t.col("value") == std::vector<std::string>{"1", "", "0.1"});
  CHECK_THROWS(t.column("missing"));
  CHECK_THROWS(t.add({"short"}));

  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = normal(rng) * std::pow(10.0, uniform(rng, -8, 8));
    CHECK(std::stod(fmt_real(v)) == v);
  }
}

TEST_CASE("linear CKA") {
  Rng rng(2);
  const Tensor x = random_tensor({200, 6}, rng);
  CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));

  const double c = std::cos(0.7), s = std::sin(0.7);
  Tensor rotated = x;
  for (std::size_t r = 0; r < 200; ++r) {
    const double a = x.at(r, 0), b = x.at(r, 1);
    rotated.at(r, 0) = c * a - s * b;
    rotated.at(r, 1) = s * a + c * b;
  }
  const Tensor y = random_tensor({200, 4}, rng);
  CHECK(std::abs(linear_cka(rotated, y) - linear_cka(x, y)) < 1e-9);
  CHECK(std::abs(linear_cka(rotated, x) - 1.0) < 1e-9);

  const Tensor u = random_tensor({1000, 3}, rng), v = random_tensor({1000, 3}, rng);
  CHECK(linear_cka(u, v) < 0.05);
}

TEST_CASE("target condition") {
  const NormStats& st = dir1d().stats;
  Rng rng(3);
  const Condition y = target_condition(st, 45.0, 5)(make_task(Family::Dir1d, 0), rng);
  CHECK(y.timesteps == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(st.rtg.denormalize(y.rtg[0]) == doctest::Approx(45.0));
  CHECK(st.rtg.denormalize(y.rtg[4]) == doctest::Approx(45.0 * 46.0 / 50.0));
}

TEST_CASE("evaluation") {
  const ExperimentConfig cfg = tiny_experiment();
  Rng rng(4);
  const ParamSet params = init_plm(cfg.pretrain.model, rng);
  const FrozenPLM plm{&params, cfg.pretrain.model};
  const std::vector<std::size_t> tasks{0, 1};

  const EvalReport a = evaluate(plm, dir1d().stats, none_provider(), Family::Dir1d, tasks, 2, 45.0, 9);
  const EvalReport b = evaluate(plm, dir1d().stats, none_provider(), Family::Dir1d, tasks, 2, 45.0, 9);
  REQUIRE(a.tasks.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.tasks[i].returns == b.tasks[i].returns);
    CHECK(a.tasks[i].returns.size() == 2);
    CHECK(std::isfinite(a.tasks[i].mean));
  }
  CHECK(a.mean() == doctest::Approx((a.tasks[0].mean + a.tasks[1].mean) / 2.0));

  const EvalReport expert = evaluate(plm, dir1d().stats, trajectory_provider(dir1d(), Tier::Expert, 5),
                                     Family::Dir1d, tasks, 1, 45.0, 9);
  CHECK(expert.provider == "expert-trajectory");

  PromptProvider broken{ProviderKind::Diffuser, [](const TaskSpec& t, Rng&) -> std::optional<Trajectory> {
                          if (t.index == 1) throw std::runtime_error("no weights");
                          return std::nullopt;
                        }};
  const EvalReport partial = evaluate(plm, dir1d().stats, broken, Family::Dir1d, tasks, 1, 45.0, 9);
  CHECK_FALSE(partial.tasks[0].failed);
  CHECK(partial.tasks[1].failed);
  CHECK(partial.mean() == partial.tasks[0].mean);

  const std::vector<EvalReport> reports{a, partial};
  const CsvTable t = report_table(reports);
  CHECK(t.rows.size() == 4);
  CHECK(t.header.front() == "provider");
  CHECK(t.rows[3][t.column("failed")] == "1");
  CHECK(t.rows[3][t.column("mean_return")].empty());
}

TEST_CASE("soft prompt tuning") {
  const ExperimentConfig cfg = tiny_experiment();
  Rng rng(5);
  const ParamSet params = init_plm(cfg.pretrain.model, rng);
  const FrozenPLM plm{&params, cfg.pretrain.model};
  const auto& few = dir1d().fewshot_data(0, Tier::Expert);
  const Trajectory init = sample_prompt(few, 5, rng);
  Rng r0(6);
  CHECK(soft_prompt_tune(plm, init, few, 0, 1e-2, 4, r0) == init);

  Rng r1(7);
  const Trajectory tuned = soft_prompt_tune(plm, init, few, 50, 1e-2, 8, r1);
  CHECK_FALSE(tuned == init);
  CHECK(tuned.timesteps == init.timesteps);
  CHECK(tuned.rewards == init.rewards);
  for (std::size_t t = 0; t < tuned.length(); ++t) {
    for (int d = 0; d < 2; ++d) {
      CHECK(std::abs(tuned.states[t][d]) <= 1.0);
      CHECK(std::abs(tuned.actions[t][d]) <= 1.0);
    }
    CHECK(std::abs(tuned.rtg[t]) <= 1.0);
  }
  Rng hr(8);
  const auto hist = sample_history_batch(few, cfg.pretrain.model.history_len, 64, hr);
  CHECK(loss_dt_batch(params, plm.config, &tuned, hist) <= loss_dt_batch(params, plm.config, &init, hist));
}

TEST_CASE("diffuser weights lookup") {
  DiffuserModel m{EpsNet{}, make_schedule(2), 0.5, {}, std::nullopt};
  CHECK_THROWS(m.weights(3));
  ParamSet a;
  a.add("w", Tensor(Shape{1, 1}, 2.0));
  m.fallback = a;
  CHECK(m.weights(3) == a);
  ParamSet b;
  b.add("w", Tensor(Shape{1, 1}, 5.0));
  m.per_task[3] = b;
  CHECK(m.weights(3) == b);
  CHECK(m.weights(4) == a);
}

TEST_CASE("ablation tables") {
  const ExperimentConfig cfg = tiny_experiment();

  const CsvTable order = prompt_ordering(cfg, std::vector<Family>{Family::Dir1d});
  CHECK(order.rows.size() == 2);

  const std::vector<Family> fams{Family::Dir1d};
  const std::vector<GradientVariant> variants{GradientVariant::Projected, GradientVariant::DmOnly};
  const CsvTable guid = ablation_guidance(cfg, fams, variants);
  REQUIRE(guid.rows.size() == 2);
  CHECK(guid.rows[1][guid.column("relative_return")] == "0");
  CHECK(guid.header == std::vector<std::string>{"family", "seed", "variant", "mean_return", "relative_return"});

  const std::vector<double> lambdas{0.0, 1.0};
  CHECK(ablation_lambda(cfg, lambdas, Family::Dir1d).rows.size() == 2);

  const CsvTable grid = ablation_init_grid(cfg, Family::Dir1d);
  CHECK(grid.rows.size() == 18);
  CHECK(ablation_init_grid(cfg, Family::Dir1d) == grid);
}

TEST_CASE("full fine-tune baseline") {
  const ExperimentConfig cfg = tiny_experiment();
  Rng rng(9);
  const ParamSet params = init_plm(cfg.pretrain.model, rng);
  const FrozenPLM plm{&params, cfg.pretrain.model};
  const auto& expert = dir1d().fewshot_data(0, Tier::Expert);
  const TaskData data{make_task(Family::Dir1d, 0), expert, expert};

  CHECK(finetune_plm(plm, data, cfg.pretrain, 0, 1) == params);
  const ParamSet tuned = finetune_plm(plm, data, cfg.pretrain, 40, 1);
  CHECK_FALSE(tuned == params);
  CHECK(finetune_plm(plm, data, cfg.pretrain, 40, 1) == tuned);

  Rng hr(10);
  const auto hist = sample_history_batch(expert, cfg.pretrain.model.history_len, 64, hr);
  Rng pr(11);
  const Trajectory prompt = sample_prompt(expert, cfg.pretrain.model.prompt_len, pr);
  CHECK(loss_dt_batch(tuned, plm.config, &prompt, hist) < loss_dt_batch(params, plm.config, &prompt, hist));

  const std::vector<std::size_t> tasks{0, 1};
  const PromptProvider prov = trajectory_provider(dir1d(), Tier::Expert, cfg.pretrain.model.prompt_len);
  const EvalReport a = evaluate_finetuned(plm, dir1d(), prov, Tier::Medium, cfg.pretrain, 2, tasks, 2, 3);
  const EvalReport b = evaluate_finetuned(plm, dir1d(), prov, Tier::Medium, cfg.pretrain, 2, tasks, 2, 3);
  CHECK(a.provider == "expert-trajectory+ft");
  REQUIRE(a.tasks.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK_FALSE(a.tasks[i].failed);
    CHECK(a.tasks[i].returns == b.tasks[i].returns);
  }
  const EvalReport plain = evaluate_finetuned(plm, dir1d(), prov, Tier::Medium, cfg.pretrain, 0, tasks, 2, 3);
  const EvalReport frozen = evaluate(plm, dir1d().stats, prov, Family::Dir1d, tasks, 2, dir1d().target_return, 3);
  CHECK(plain.tasks[0].returns == frozen.tasks[0].returns);
}
