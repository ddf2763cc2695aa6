#include <cmath>
#include <exception>
#include <stdexcept>

#include "pdiff/harness.hpp"

namespace pdiff {

double EvalReport::mean() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& t : tasks) {
    if (t.failed) continue;
    s += t.mean;
    ++n;
  }
  return n ? s / static_cast<double>(n) : std::nan("");
}

double EvalReport::stddev() const {
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (const auto& t : tasks) {
    if (t.failed) continue;
    for (double r : t.returns) {
      s += r;
      s2 += r * r;
      ++n;
    }
  }
  if (n == 0) return std::nan("");
  const double m = s / static_cast<double>(n);
  return std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - m * m));
}

EvalReport evaluate(const FrozenPLM& plm, const NormStats& stats, const PromptProvider& provider, Family family,
                    std::span<const std::size_t> tasks, std::size_t episodes, double target_return,
                    std::uint64_t seed) {
  EvalReport rep;
  rep.provider = to_string(provider.kind);
  rep.family = family;
  rep.episodes = episodes;
  rep.seed = seed;
  for (std::size_t idx : tasks) {
    TaskResult res;
    res.task = idx;
    const TaskSpec task = make_task(family, idx);
    std::optional<Trajectory> prompt;
    try {
      Rng rng(derive_seed(seed, 2 * idx));
      prompt = provider.prompt(task, rng);
      const RolloutResult r = rollout(*plm.params, plm.config, stats, prompt ? &*prompt : nullptr,
                                      EnvModel::for_task(task), target_return, episodes, derive_seed(seed, 2 * idx + 1));
      res.returns = r.returns;
      res.mean = r.mean;
      res.stddev = r.stddev;
    } catch (const std::exception& e) {
      res.failed = true;
      res.error = e.what();
    }
    rep.tasks.push_back(std::move(res));
  }
  return rep;
}

ParamSet finetune_plm(const FrozenPLM& plm, const TaskData& data, const PretrainConfig& cfg, std::size_t epochs,
                      std::uint64_t seed) {
  if (data.histories.empty()) throw std::invalid_argument("finetune_plm: no few-shot histories");
  PretrainConfig ft = cfg;
  ft.model = plm.config;
  ft.seed = seed;
  ft.iterations = epochs * ((data.histories.size() + cfg.batch - 1) / cfg.batch);
  return pretrain(std::span<const TaskData>(&data, 1), ft, nullptr, *plm.params).params;
}

EvalReport evaluate_finetuned(const FrozenPLM& plm, const FamilyBundle& bundle, const PromptProvider& provider,
                              Tier data_tier, const PretrainConfig& cfg, std::size_t epochs,
                              std::span<const std::size_t> tasks, std::size_t episodes, std::uint64_t seed) {
  EvalReport rep;
  rep.provider = to_string(provider.kind) + "+ft";
  rep.family = bundle.family;
  rep.episodes = episodes;
  rep.seed = seed;
  for (std::size_t idx : tasks) {
    std::optional<ParamSet> tuned;
    try {
      const TaskData data{make_task(bundle.family, idx), bundle.fewshot_data(idx, Tier::Expert),
                          bundle.fewshot_data(idx, data_tier)};
      tuned = finetune_plm(plm, data, cfg, epochs, derive_seed(seed, 1000003 + idx));
    } catch (const std::exception& e) {
      TaskResult res;
      res.task = idx;
      res.failed = true;
      res.error = e.what();
      rep.tasks.push_back(std::move(res));
      continue;
    }
    const FrozenPLM ft{&*tuned, plm.config};
    const std::size_t one[] = {idx};
    EvalReport r = evaluate(ft, bundle.stats, provider, bundle.family, one, episodes, bundle.target_return, seed);
    rep.tasks.push_back(std::move(r.tasks.front()));
  }
  return rep;
}

}  // namespace pdiff
