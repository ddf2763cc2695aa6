#include <algorithm>
#include <stdexcept>

#include "pdiff/harness.hpp"

namespace pdiff {

std::string to_string(ProviderKind k) {
  switch (k) {
    case ProviderKind::None: return "none";
    case ProviderKind::RandomTrajectory: return "random-trajectory";
    case ProviderKind::ExpertTrajectory: return "expert-trajectory";
    case ProviderKind::SoftPrompt: return "soft-prompt";
    case ProviderKind::Diffuser: return "diffuser";
  }
  return "?";
}

ProviderKind parse_provider(const std::string& s) {
  for (auto k : {ProviderKind::None, ProviderKind::RandomTrajectory, ProviderKind::ExpertTrajectory,
                 ProviderKind::SoftPrompt, ProviderKind::Diffuser})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown provider '" + s + "'");
}

PromptProvider none_provider() {
  return {ProviderKind::None, [](const TaskSpec&, Rng&) { return std::optional<Trajectory>(); }};
}

PromptProvider trajectory_provider(const FamilyBundle& bundle, Tier tier, std::size_t len) {
  const ProviderKind kind = tier == Tier::Random ? ProviderKind::RandomTrajectory : ProviderKind::ExpertTrajectory;
  return {kind, [&bundle, tier, len](const TaskSpec& task, Rng& rng) {
            return std::optional<Trajectory>(sample_prompt(bundle.fewshot_data(task.index, tier), len, rng));
          }};
}

PromptProvider soft_prompt_provider(const FamilyBundle& bundle, const FrozenPLM& plm, Tier init_tier, Tier data_tier,
                                    std::size_t steps, double lr, std::size_t batch) {
  return {ProviderKind::SoftPrompt, [&bundle, plm, init_tier, data_tier, steps, lr, batch](const TaskSpec& task,
                                                                                          Rng& rng) {
            const Trajectory init = sample_prompt(bundle.fewshot_data(task.index, init_tier), plm.config.prompt_len, rng);
            return std::optional<Trajectory>(
                soft_prompt_tune(plm, init, bundle.fewshot_data(task.index, data_tier), steps, lr, batch, rng));
          }};
}

ConditionSource fewshot_condition(const FamilyBundle& bundle, Tier tier, std::size_t len) {
  return [&bundle, tier, len](const TaskSpec& task, Rng& rng) {
    return condition_of(sample_prompt(bundle.fewshot_data(task.index, tier), len, rng));
  };
}

ConditionSource target_condition(const NormStats& stats, double target_return, std::size_t len) {
  return [stats, target_return, len](const TaskSpec&, Rng&) {
    Condition y;
    for (std::size_t j = 0; j < len; ++j) {
      const double remaining = target_return * static_cast<double>(kHorizon - static_cast<int>(j)) / kHorizon;
      y.rtg.push_back(stats.rtg.normalize(remaining));
      y.timesteps.push_back(j);
    }
    return y;
  };
}

const ParamSet& DiffuserModel::weights(std::size_t task) const {
  const auto it = per_task.find(task);
  if (it != per_task.end()) return it->second;
  if (fallback) return *fallback;
  throw std::out_of_range("diffuser: no weights for task " + std::to_string(task));
}

PromptProvider diffuser_provider(std::shared_ptr<const DiffuserModel> model, ConditionSource condition) {
  return {ProviderKind::Diffuser, [model, condition](const TaskSpec& task, Rng& rng) {
            const Condition y = condition(task, rng);
            const Tensor x = sample_chain(model->net, model->weights(task.index), std::span<const Condition>(&y, 1),
                                          model->schedule, model->temperature, rng);
            return std::optional<Trajectory>(from_prompt_tensor(x.values(), y));
          }};
}

}  // namespace pdiff
