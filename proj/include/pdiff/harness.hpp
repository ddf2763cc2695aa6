#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdiff/guidance.hpp"

namespace pdiff {

// ---------------------------------------------------------------- config

struct ExperimentConfig {
  PretrainConfig pretrain;
  GuidanceConfig guidance;
  /// Expert episodes per training task; they form the prompt corpus.
  std::size_t prompt_episodes = 20;
  /// Medium episodes per training task added to the behaviour histories.
  std::size_t history_episodes = 20;
  /// Episodes per tier in each test task's few-shot dataset.
  std::size_t fewshot_episodes = 5;
  std::size_t eval_episodes = 10;
  std::size_t soft_prompt_steps = 2000;
  double soft_prompt_lr = 1e-4;
  std::size_t soft_prompt_batch = 16;
  /// Passes over a test task's few-shot data for the full fine-tune baseline.
  std::size_t plm_finetune_epochs = 20;
  /// Test tasks per family used by the ablations; 0 means all.
  std::size_t max_test_tasks = 0;
  std::map<Family, double> target_return{{Family::Dir1d, 45.0}, {Family::Vel, 0.0}, {Family::Dir2d, 45.0}};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::uint64_t data_seed = 0;

  /// Reduced budgets sized for a single CPU core.
  static ExperimentConfig desk();

  /// Sorted-key JSON; the digest is taken over this text.
  std::string canonical() const;
  std::string digest() const;
  /// Overlays the keys present in `text` onto the defaults; unknown keys are
  /// rejected.
  static ExperimentConfig parse(const std::string& text, const ExperimentConfig& base);
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path, const ExperimentConfig& base);
};

std::uint64_t fnv1a64(std::string_view text);

// -------------------------------------------------------------- pipeline

/// Normalized data for one task family: training tasks for the PLM and the
/// diffuser's first phase, plus per-tier few-shot sets for every test task.
struct FamilyBundle {
  Family family = Family::Dir1d;
  TaskSplit split;
  NormStats stats;
  std::vector<TaskData> train;
  std::map<std::size_t, std::array<std::vector<Trajectory>, 3>> fewshot;
  double target_return = 0.0;

  const std::vector<Trajectory>& fewshot_data(std::size_t task, Tier tier) const;
  /// Few-shot data of one tier as diffuser fine-tuning material.
  TaskData fewshot_task(std::size_t task, Tier tier) const;
  std::vector<std::size_t> test_tasks(std::size_t limit = 0) const;
};

std::uint64_t dataset_seed(std::uint64_t base, Family family, std::size_t task, Tier tier);
FamilyBundle build_family(Family family, const TaskSplit& split, const ExperimentConfig& cfg);

PretrainResult pretrain_plm(const FamilyBundle& bundle, const ExperimentConfig& cfg, std::uint64_t seed,
                            std::ostream* log = nullptr);
/// Diffuser after the denoising-only phase on training-task prompts.
ParamSet pretrain_diffuser(const FamilyBundle& bundle, const ExperimentConfig& cfg, std::uint64_t seed);
GuidanceConfig guidance_for_seed(const ExperimentConfig& cfg, std::uint64_t seed);

// ------------------------------------------------------------- providers

enum class ProviderKind { None, RandomTrajectory, ExpertTrajectory, SoftPrompt, Diffuser };
std::string to_string(ProviderKind k);
ProviderKind parse_provider(const std::string& s);

/// Produces a normalized prompt for a task, or nullopt for prompt-free input.
struct PromptProvider {
  ProviderKind kind = ProviderKind::None;
  std::function<std::optional<Trajectory>(const TaskSpec&, Rng&)> prompt;
};

PromptProvider none_provider();
/// A window of the task's few-shot data of the given tier.
PromptProvider trajectory_provider(const FamilyBundle& bundle, Tier tier, std::size_t len);
/// An `init_tier` window tuned against `data_tier` few-shot histories.
PromptProvider soft_prompt_provider(const FamilyBundle& bundle, const FrozenPLM& plm, Tier init_tier, Tier data_tier,
                                    std::size_t steps, double lr, std::size_t batch);

/// Where a diffuser's condition comes from at generation time.
using ConditionSource = std::function<Condition(const TaskSpec&, Rng&)>;
/// Return-to-go and timesteps of a window of the task's few-shot data.
ConditionSource fewshot_condition(const FamilyBundle& bundle, Tier tier, std::size_t len);
/// Timesteps 0..len-1 with return-to-go decaying linearly from the target.
ConditionSource target_condition(const NormStats& stats, double target_return, std::size_t len);

struct DiffuserModel {
  EpsNet net;
  NoiseSchedule schedule;
  double temperature = 0.5;
  /// Weights per test task; `fallback` serves tasks without an entry.
  std::map<std::size_t, ParamSet> per_task;
  std::optional<ParamSet> fallback;

  const ParamSet& weights(std::size_t task) const;
};
PromptProvider diffuser_provider(std::shared_ptr<const DiffuserModel> model, ConditionSource condition);

/// Prompt tokens as free parameters of the frozen PLM's action loss, updated
/// with AdamW and clamped to [-1, 1] after every step.
Trajectory soft_prompt_tune(const FrozenPLM& plm, const Trajectory& init_prompt, std::span<const Trajectory> fewshot,
                            std::size_t steps, double lr, std::size_t batch, Rng& rng);

// ------------------------------------------------------------ evaluation

struct TaskResult {
  std::size_t task = 0;
  std::vector<double> returns;
  double mean = 0.0;
  double stddev = 0.0;
  bool failed = false;
  std::string error;
};

struct EvalReport {
  std::string provider;
  Family family = Family::Dir1d;
  std::vector<TaskResult> tasks;
  std::size_t episodes = 0;
  std::uint64_t seed = 0;
  std::string config_digest;

  /// Mean of the per-task means over tasks that did not fail.
  double mean() const;
  double stddev() const;
};

/// One prompt per task, then `episodes` rollouts conditioned on the target
/// return. A provider that throws marks its task failed.
EvalReport evaluate(const FrozenPLM& plm, const NormStats& stats, const PromptProvider& provider, Family family,
                    std::span<const std::size_t> tasks, std::size_t episodes, double target_return,
                    std::uint64_t seed);

/// Copy of the PLM trained further on one task: prompts from `data.prompts`,
/// targets from `data.histories`, `epochs` passes of ceil(histories / batch)
/// updates each, every weight trainable.
ParamSet finetune_plm(const FrozenPLM& plm, const TaskData& data, const PretrainConfig& cfg, std::size_t epochs,
                      std::uint64_t seed);
/// `evaluate` with a separately fine-tuned PLM per task (expert prompts,
/// `data_tier` histories). The provider name gains a "+ft" suffix.
EvalReport evaluate_finetuned(const FrozenPLM& plm, const FamilyBundle& bundle, const PromptProvider& provider,
                              Tier data_tier, const PretrainConfig& cfg, std::size_t epochs,
                              std::span<const std::size_t> tasks, std::size_t episodes, std::uint64_t seed);

/// ||Xc^T Yc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F) over column-centred rows.
double linear_cka(const Tensor& x, const Tensor& y);

// ------------------------------------------------------------------- CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
  std::size_t column(const std::string& name) const;
  std::vector<std::string> col(const std::string& name) const;
  bool operator==(const CsvTable&) const = default;
};

void write_csv(std::ostream& os, const CsvTable& t);
CsvTable read_csv(std::istream& is);
void save_csv(const std::filesystem::path& path, const CsvTable& t);
CsvTable load_csv(const std::filesystem::path& path);
/// Shortest text that reads back to the same double.
std::string fmt_real(double v);

CsvTable report_table(std::span<const EvalReport> reports);

// ------------------------------------------------------------- ablations

/// Progress callback for long runs; may be empty.
using Progress = std::function<void(const std::string&)>;

/// columns: family,seed,provider,init_tier,data_tier,mean_return
CsvTable ablation_init_grid(const ExperimentConfig& cfg, Family family = Family::Vel, const Progress& progress = {});
/// columns: family,seed,variant,mean_return,relative_return
CsvTable ablation_guidance(const ExperimentConfig& cfg, std::span<const Family> families,
                           std::span<const GradientVariant> variants, const Progress& progress = {});
/// columns: family,seed,lambda,mean_return
CsvTable ablation_lambda(const ExperimentConfig& cfg, std::span<const double> lambdas, Family family = Family::Vel,
                         const Progress& progress = {});
/// columns: family,seed,setting,provider,mean_return
CsvTable ablation_ood(const ExperimentConfig& cfg, const Progress& progress = {});
/// columns: family,seed,provider,mean_return
CsvTable prompt_ordering(const ExperimentConfig& cfg, std::span<const Family> families,
                         const Progress& progress = {});

// -------------------------------------------------------------- manifest

struct Manifest {
  std::string command;
  std::string config_digest;
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;
  double wall_ms = 0.0;
};

std::string git_describe();
void write_manifest(const std::filesystem::path& path, const Manifest& m);

}  // namespace pdiff
