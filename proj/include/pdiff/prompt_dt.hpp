#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "pdiff/autodiff.hpp"
#include "pdiff/datasets.hpp"
#include "pdiff/optim.hpp"

namespace pdiff {

struct PLMConfig {
  std::size_t layers = 3;
  std::size_t heads = 1;
  std::size_t width = 128;
  double dropout = 0.1;
  std::size_t prompt_len = 5;
  std::size_t history_len = 20;
  std::size_t max_timestep = kHorizon;

  void validate() const;
  std::size_t max_tokens() const { return 3 * (prompt_len + history_len); }
};

enum class Modality : std::uint8_t { ReturnToGo, State, Action };

/// Interleaved (rtg, state, action) steps: prompt block first, then history.
struct TokenSequence {
  std::size_t prompt_steps = 0;
  std::size_t history_steps = 0;
  std::vector<double> rtg;
  std::vector<Vec2> states;
  std::vector<Vec2> actions;
  std::vector<std::size_t> timesteps;

  std::size_t steps() const { return prompt_steps + history_steps; }
  std::size_t size() const { return 3 * steps(); }
  std::vector<Modality> modalities() const;
  /// Environment timestep of every token.
  std::vector<std::size_t> token_timesteps() const;
};

/// Both inputs must be normalized with the same statistics. The prompt
/// contributes its return-to-go, not its reward row.
TokenSequence build_input(const Trajectory& prompt, const Trajectory& history);

ParamSet init_plm(const PLMConfig& cfg, Rng& rng);

/// Prompt steps resident on a graph so that gradients can reach them. Rows are
/// either one shared prompt (P rows) or one prompt per batch item (B*P rows).
struct PromptBlock {
  Var rtg;      // [rows x 1]
  Var states;   // [rows x kStateDim]
  Var actions;  // [rows x kActionDim]
  std::vector<std::size_t> timesteps;
  std::size_t steps = 0;  // P
};

PromptBlock prompt_constants(Graph& g, std::span<const Trajectory> prompts);

/// Action predictions at every state token, [B*(P+K) x kActionDim], rows
/// ordered by batch item, prompt positions before history positions.
/// `prompt` may be null for prompt-free inputs. All histories share a length.
Var plm_forward(const BoundParams& p, const PLMConfig& cfg, const PromptBlock* prompt,
                std::span<const Trajectory> histories, bool train = false, Rng* rng = nullptr);

/// Convenience evaluation of a single token sequence, [steps x kActionDim].
Tensor plm_forward(const ParamSet& params, const PLMConfig& cfg, const TokenSequence& tokens);

/// Predictions at the history positions only, [B*K x kActionDim].
Var history_predictions(Var predictions, std::size_t batch, std::size_t prompt_steps, std::size_t history_steps);
Tensor history_action_targets(std::span<const Trajectory> histories);

/// Mean over batch, history positions and action components of the squared
/// action error. Prompt positions carry no loss.
Var loss_dt(const BoundParams& p, const PLMConfig& cfg, const PromptBlock* prompt,
            std::span<const Trajectory> histories, bool train = false, Rng* rng = nullptr);
double loss_dt_batch(const ParamSet& params, const PLMConfig& cfg, const Trajectory* prompt,
                     std::span<const Trajectory> histories);

/// Normalized training material for one task.
struct TaskData {
  TaskSpec task;
  std::vector<Trajectory> prompts;    // prompt corpus
  std::vector<Trajectory> histories;  // behaviour data
};

struct PretrainConfig {
  PLMConfig model;
  AdamWConfig optim{.lr = 1e-4, .beta1 = 0.9, .beta2 = 0.95, .eps = 1e-8, .weight_decay = 1e-4};
  std::size_t iterations = 5000;
  std::size_t batch = 16;
  double grad_clip = 0.25;
  /// Probability of training an iteration without a prompt, which lets the
  /// same network serve the prompt-free baseline.
  double no_prompt_prob = 0.0;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  ParamSet params;
  std::vector<double> losses;
};

/// Samples a training task per iteration, then a prompt and a history batch
/// from it, and takes one clipped AdamW step on the action loss. Writes
/// "iteration,loss,wall_ms" rows to `log` when given.
PretrainResult pretrain(std::span<const TaskData> tasks, const PretrainConfig& cfg, std::ostream* log = nullptr,
                        std::optional<ParamSet> init = std::nullopt);

/// Environment hooks; defaults come from the point-mass task.
struct EnvModel {
  std::function<EnvState(std::uint64_t seed)> reset;
  std::function<StepResult(const EnvState&, Vec2)> step;
  static EnvModel for_task(const TaskSpec& task);
};

struct RolloutResult {
  std::vector<double> returns;
  double mean = 0.0;
  double stddev = 0.0;
};

/// Autoregressive control: keep the last K steps, predict the action at the
/// newest state token, step the environment and decrement the running
/// return-to-go by the observed reward. Episodes run in lockstep.
RolloutResult rollout(const ParamSet& params, const PLMConfig& cfg, const NormStats& stats, const Trajectory* prompt,
                      const EnvModel& env, double target_rtg, std::size_t n_episodes, std::uint64_t seed);

}  // namespace pdiff
