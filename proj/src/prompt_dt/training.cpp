#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "pdiff/prompt_dt.hpp"

namespace pdiff {

PretrainResult pretrain(std::span<const TaskData> tasks, const PretrainConfig& cfg, std::ostream* log,
                        std::optional<ParamSet> init) {
  cfg.model.validate();
  if (tasks.empty()) throw std::invalid_argument("pretrain: no training tasks");
  for (const auto& t : tasks) {
    if (t.histories.empty() || (cfg.model.prompt_len > 0 && t.prompts.empty())) {
      throw std::invalid_argument("pretrain: missing dataset for " + to_string(t.task.family) + " task " +
                                  std::to_string(t.task.index));
    }
  }
  Rng rng(cfg.seed);
  PretrainResult res;
  res.params = init ? std::move(*init) : init_plm(cfg.model, rng);
  AdamWState opt = AdamWState::for_params(res.params, cfg.optim);
  if (log) *log << "iteration,loss,wall_ms\n";
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const TaskData& task = tasks[uniform_index(rng, tasks.size())];
    const bool with_prompt = cfg.model.prompt_len > 0 && !(cfg.no_prompt_prob > 0.0 && uniform(rng) < cfg.no_prompt_prob);
    std::vector<Trajectory> prompts;
    if (with_prompt) {
      for (std::size_t b = 0; b < cfg.batch; ++b) prompts.push_back(sample_prompt(task.prompts, cfg.model.prompt_len, rng));
    }
    const auto hist = sample_history_batch(task.histories, cfg.model.history_len, cfg.batch, rng);

    Graph g;
    BoundParams p(g, res.params);
    std::optional<PromptBlock> pb;
    if (with_prompt) pb = prompt_constants(g, prompts);
    Var loss = loss_dt(p, cfg.model, pb ? &*pb : nullptr, hist, true, &rng);
    g.backward(loss);
    ParamSet grads = p.grads();
    if (!grads.all_finite()) throw std::runtime_error("pretrain: non-finite gradient at iteration " + std::to_string(it));
    clip_global_norm(grads, cfg.grad_clip);
    adamw_step(res.params, grads, opt);
    const double lv = loss.value().item();
    res.losses.push_back(lv);
    if (log) {
      const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      *log << it << ',' << lv << ',' << ms << '\n';
    }
  }
  return res;
}

}  // namespace pdiff
