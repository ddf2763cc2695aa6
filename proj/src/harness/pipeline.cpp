#include <stdexcept>

#include "pdiff/harness.hpp"

namespace pdiff {

namespace {

constexpr std::array<Tier, 3> kTiers{Tier::Expert, Tier::Medium, Tier::Random};

std::vector<Trajectory> normalized(const std::vector<Trajectory>& raw, const NormStats& stats) {
  std::vector<Trajectory> out;
  out.reserve(raw.size());
  for (const auto& t : raw) out.push_back(normalize(t, stats));
  return out;
}

}  // namespace

std::uint64_t dataset_seed(std::uint64_t base, Family family, std::size_t task, Tier tier) {
  const std::uint64_t salt =
      (static_cast<std::uint64_t>(family) * 1000 + task) * 10 + static_cast<std::uint64_t>(tier);
  return derive_seed(base, salt);
}

const std::vector<Trajectory>& FamilyBundle::fewshot_data(std::size_t task, Tier tier) const {
  const auto it = fewshot.find(task);
  if (it == fewshot.end()) {
    throw std::out_of_range("no few-shot data for " + to_string(family) + " task " + std::to_string(task));
  }
  return it->second[static_cast<std::size_t>(tier)];
}

TaskData FamilyBundle::fewshot_task(std::size_t task, Tier tier) const {
  const auto& data = fewshot_data(task, tier);
  return TaskData{make_task(family, task), data, data};
}

std::vector<std::size_t> FamilyBundle::test_tasks(std::size_t limit) const {
  std::vector<std::size_t> out = split.test;
  if (limit > 0 && out.size() > limit) out.resize(limit);
  return out;
}

FamilyBundle build_family(Family family, const TaskSplit& split, const ExperimentConfig& cfg) {
  FamilyBundle b;
  b.family = family;
  b.split = split;
  b.target_return = cfg.target_return.count(family) ? cfg.target_return.at(family) : 0.0;

  std::vector<std::vector<Trajectory>> expert, medium;
  for (std::size_t idx : split.train) {
    const TaskSpec task = make_task(family, idx);
    expert.push_back(collect(task, Tier::Expert, cfg.prompt_episodes, dataset_seed(cfg.data_seed, family, idx, Tier::Expert)));
    medium.push_back(
        collect(task, Tier::Medium, cfg.history_episodes, dataset_seed(cfg.data_seed, family, idx, Tier::Medium)));
  }
  b.stats = fit_norm_stats(std::span<const std::vector<Trajectory>>(expert));

  for (std::size_t i = 0; i < split.train.size(); ++i) {
    TaskData td{make_task(family, split.train[i]), normalized(expert[i], b.stats), {}};
    td.histories = td.prompts;
    const auto med = normalized(medium[i], b.stats);
    td.histories.insert(td.histories.end(), med.begin(), med.end());
    b.train.push_back(std::move(td));
  }
  // Separate seed stream: dir-1d test tasks coincide with its training tasks.
  const std::uint64_t fewshot_base = derive_seed(cfg.data_seed, 0xfe);
  for (std::size_t idx : split.test) {
    const TaskSpec task = make_task(family, idx);
    auto& slot = b.fewshot[idx];
    for (Tier tier : kTiers) {
      slot[static_cast<std::size_t>(tier)] = normalized(
          collect(task, tier, cfg.fewshot_episodes, dataset_seed(fewshot_base, family, idx, tier)), b.stats);
    }
  }
  return b;
}

PretrainResult pretrain_plm(const FamilyBundle& bundle, const ExperimentConfig& cfg, std::uint64_t seed,
                            std::ostream* log) {
  PretrainConfig pc = cfg.pretrain;
  pc.seed = derive_seed(seed, 0x11);
  return pretrain(bundle.train, pc, log);
}

GuidanceConfig guidance_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  GuidanceConfig g = cfg.guidance;
  g.net.prompt_len = cfg.pretrain.model.prompt_len;
  g.net.max_timestep = cfg.pretrain.model.max_timestep;
  g.seed = derive_seed(seed, 0x22);
  return g;
}

ParamSet pretrain_diffuser(const FamilyBundle& bundle, const ExperimentConfig& cfg, std::uint64_t seed) {
  return denoising_pretrain(bundle.train, guidance_for_seed(cfg, seed));
}

}  // namespace pdiff
