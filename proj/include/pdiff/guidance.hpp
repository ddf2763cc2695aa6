#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdiff/diffuser.hpp"
#include "pdiff/optim.hpp"
#include "pdiff/prompt_dt.hpp"

namespace pdiff {

/// All parameter gradients of a ParamSet laid end to end, in ParamSet order.
struct FlatGrad {
  std::vector<double> values;
  std::vector<std::pair<std::string, Shape>> layout;

  static FlatGrad flatten(const ParamSet& grads);
  ParamSet scatter() const;
  std::size_t size() const { return values.size(); }
  /// Same layout, new values.
  FlatGrad with_values(std::vector<double> v) const;
};

double dot(const FlatGrad& a, const FlatGrad& b);
double norm(const FlatGrad& g);
double cosine(const FlatGrad& a, const FlatGrad& b);

/// Removes from g_dt its component along g_dm. Returns g_dt unchanged (with a
/// warning) when g_dm is numerically zero.
FlatGrad project(const FlatGrad& g_dt, const FlatGrad& g_dm);
/// Same rule applied independently to every parameter tensor.
FlatGrad project_per_tensor(const FlatGrad& g_dt, const FlatGrad& g_dm);

enum class GradientVariant { Projected, DmOnly, DtOnly, NaiveSum };
std::string to_string(GradientVariant v);
GradientVariant parse_variant(const std::string& s);

enum class Branch { Aligned, Conflict };
std::string to_string(Branch b);

/// g_dm + lambda * project(g_dt, g_dm) when the two conflict, otherwise
/// g_dm + lambda * g_dt.
FlatGrad combine(const FlatGrad& g_dm, const FlatGrad& g_dt, double lambda, Branch* branch = nullptr);
/// Ablation selector: DmOnly = g_dm, DtOnly = g_dt, NaiveSum = g_dm + lambda g_dt.
FlatGrad combine(const FlatGrad& g_dm, const FlatGrad& g_dt, double lambda, GradientVariant variant,
                 bool per_tensor = false, Branch* branch = nullptr);

struct GuidanceConfig {
  EpsNetConfig net;
  std::size_t diffusion_steps = 20;
  double lambda = 1.0;
  double temperature = 0.5;
  std::size_t batch = 32;
  std::size_t history_batch = 16;
  std::size_t pretrain_iterations = 5000;
  std::size_t finetune_iterations = 2000;
  GradientVariant variant = GradientVariant::Projected;
  bool per_tensor_projection = false;
  double grad_clip = 0.25;
  AdamWConfig optim{.lr = 1e-4, .beta1 = 0.9, .beta2 = 0.95, .eps = 1e-8, .weight_decay = 1e-4};
  /// Learning rate of the denoising-only phase; `optim.lr` drives fine-tuning.
  double pretrain_lr = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Frozen PLM plus everything needed to score a generated prompt.
struct FrozenPLM {
  const ParamSet* params = nullptr;
  PLMConfig config;
};

/// Prompts assembled from a generated [B x D] chain output: states and
/// actions from the tensor, return-to-go and timesteps from the conditions.
PromptBlock generated_prompt(Var x0, std::span<const Condition> y);

/// Action loss of the frozen PLM on `histories`, prompted with chain samples
/// for conditions `y` (one per history, or one shared). Differentiable in
/// whatever the predictor depends on.
Var guidance_loss(Graph& g, const EpsPredictor& eps, const FrozenPLM& plm, std::span<const Condition> y,
                  std::span<const Trajectory> histories, const NoiseSchedule& schedule, double temperature,
                  const ChainNoise& noise);
double guidance_loss(const EpsNet& net, const ParamSet& theta, const FrozenPLM& plm, std::span<const Condition> y,
                     std::span<const Trajectory> histories, const NoiseSchedule& schedule, double temperature,
                     Rng& rng);

struct StepLog {
  std::size_t iteration = 0;
  double loss_dm = 0.0;
  std::optional<double> loss_dt;
  std::optional<double> cos_angle;
  std::optional<Branch> branch;
  double norm_dm = 0.0;
  double norm_dt = 0.0;
  double norm_update = 0.0;
  bool skipped = false;
  double wall_ms = 0.0;
};

/// Writes the CSV header for StepLog rows.
void write_step_header(std::ostream& os);
void write_step_row(std::ostream& os, const StepLog& log);

struct DiffuserState {
  ParamSet theta;
  AdamWState optim;
};

/// One update on a sampled (prompt batch, history batch) pair. The chain's
/// starting noise reuses the eps drawn for the denoising loss. Non-finite
/// gradients leave the state untouched and set `skipped`.
StepLog train_step(DiffuserState& state, const EpsNet& net, const FrozenPLM& plm, std::span<const Trajectory> prompts,
                   std::span<const Trajectory> histories, const GuidanceConfig& cfg, const NoiseSchedule& schedule,
                   Rng& rng);
/// Denoising-only update on prompt segments.
StepLog dm_step(DiffuserState& state, const EpsNet& net, std::span<const Trajectory> prompts,
                const GuidanceConfig& cfg, const NoiseSchedule& schedule, Rng& rng);

struct DiffuserResult {
  ParamSet theta;
  std::vector<double> phase1_losses;
  std::vector<StepLog> phase2;
  std::size_t skipped = 0;
  bool zero_shot = false;
};

/// Phase 1 fits the denoising loss on training-task prompts; phase 2 runs
/// guided steps on the few-shot task (skipped with a warning when null).
DiffuserResult train_prompt_diffuser(std::span<const TaskData> train_tasks, const TaskData* fewshot,
                                     const FrozenPLM& plm, const GuidanceConfig& cfg, std::ostream* log = nullptr,
                                     std::optional<ParamSet> init = std::nullopt);

/// Phase 1 alone: denoising loss on the pooled training-task prompts.
ParamSet denoising_pretrain(std::span<const TaskData> train_tasks, const GuidanceConfig& cfg,
                            std::vector<double>* losses = nullptr, std::size_t* skipped = nullptr,
                            std::optional<ParamSet> init = std::nullopt);

/// Phase 2 alone, starting from given diffuser weights.
DiffuserResult finetune_prompt_diffuser(const ParamSet& theta, const TaskData& fewshot, const FrozenPLM& plm,
                                        const GuidanceConfig& cfg, std::ostream* log = nullptr);

/// Isotropic quadratic weight * ||x - center||^2 in two dimensions.
struct Quadratic {
  Vec2 center{0.0, 0.0};
  double weight = 1.0;
  double value(const Vec2& x) const;
  Vec2 gradient(const Vec2& x) const;
  double lipschitz() const { return 2.0 * weight; }
};

struct TheoremRun {
  Vec2 start;
  Vec2 end;
  std::size_t iterations = 0;
  double cos_angle = 0.0;
  double grad_norm = 0.0;
  bool satisfied = false;
};

struct TheoremReport {
  std::vector<TheoremRun> runs;
  bool all_satisfied() const;
};

/// Descends with the projected rule (lambda = 1) from random starts in
/// [-2, 2]^2, stopping at cos <= -1 + tol or ||grad(L1 + L2)|| <= tol.
TheoremReport theorem1_check(const Quadratic& l1, const Quadratic& l2, double step_size, std::size_t iters,
                             std::size_t starts = 10, std::uint64_t seed = 0, double tol = 1e-3);

}  // namespace pdiff
