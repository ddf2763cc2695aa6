#pragma once

#include "pdiff/harness.hpp"

namespace pdiff::testing {

/// Smallest configuration that still exercises every pipeline stage.
inline ExperimentConfig tiny_experiment() {
  ExperimentConfig c = ExperimentConfig::desk();
  c.pretrain.model.layers = 1;
  c.pretrain.model.width = 8;
  c.pretrain.model.history_len = 4;
  c.pretrain.iterations = 5;
  c.pretrain.batch = 4;
  c.guidance.net.hidden = 16;
  c.guidance.batch = 4;
  c.guidance.history_batch = 2;
  c.guidance.pretrain_iterations = 5;
  c.guidance.finetune_iterations = 2;
  c.prompt_episodes = 2;
  c.history_episodes = 2;
  c.fewshot_episodes = 2;
  c.eval_episodes = 1;
  c.soft_prompt_steps = 2;
  c.soft_prompt_batch = 2;
  c.max_test_tasks = 1;
  c.seeds = {0};
  return c;
}

}  // namespace pdiff::testing
