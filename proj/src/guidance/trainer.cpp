#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "pdiff/guidance.hpp"

namespace pdiff {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool finite(const FlatGrad& g) {
  for (double v : g.values)
    if (!std::isfinite(v)) return false;
  return true;
}

FlatGrad dm_gradient(const EpsNet& net, const ParamSet& theta, const DiffusionBatch& batch,
                     const NoiseSchedule& schedule, const DmNoise& noise, double& loss) {
  Graph g;
  BoundParams p(g, theta);
  Var l = loss_dm(g, bind_predictor(net, p), batch, schedule, noise);
  loss = l.value().item();
  if (!std::isfinite(loss)) return FlatGrad{std::vector<double>(theta.numel(), NAN), {}};
  g.backward(l);
  return FlatGrad::flatten(p.grads());
}

void apply(DiffuserState& state, const FlatGrad& update, const GuidanceConfig& cfg, StepLog& log) {
  ParamSet grads = update.scatter();
  log.norm_update = clip_global_norm(grads, cfg.grad_clip);
  adamw_step(state.theta, grads, state.optim);
}

std::vector<Trajectory> sample_windows(std::span<const Trajectory> corpus, std::size_t len, std::size_t n, Rng& rng) {
  std::vector<Trajectory> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_prompt(corpus, len, rng));
  return out;
}

}  // namespace

void GuidanceConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 5.0)) throw std::invalid_argument("guidance: lambda must lie in [0, 5]");
  if (!(temperature >= 0.0 && temperature < 1.0)) throw std::invalid_argument("guidance: temperature must lie in [0, 1)");
  if (!(pretrain_lr > 0.0) || !(optim.lr > 0.0)) throw std::invalid_argument("guidance: learning rates must be positive");
  if (diffusion_steps < 1) throw std::invalid_argument("guidance: need at least one diffusion step");
  if (batch == 0 || history_batch == 0) throw std::invalid_argument("guidance: batch sizes must be positive");
}

void write_step_header(std::ostream& os) {
  os << "iteration,loss_dm,loss_dt,cos_angle,branch_taken,norm_dm,norm_dt,norm_update,skipped,wall_ms\n";
}

void write_step_row(std::ostream& os, const StepLog& s) {
  os << s.iteration << ',' << s.loss_dm << ',';
  if (s.loss_dt) os << *s.loss_dt;
  os << ',';
  if (s.cos_angle) os << *s.cos_angle;
  os << ',';
  if (s.branch) os << to_string(*s.branch);
  os << ',' << s.norm_dm << ',' << s.norm_dt << ',' << s.norm_update << ',' << (s.skipped ? 1 : 0) << ','
     << s.wall_ms << '\n';
}

StepLog dm_step(DiffuserState& state, const EpsNet& net, std::span<const Trajectory> prompts,
                const GuidanceConfig& cfg, const NoiseSchedule& schedule, Rng& rng) {
  const auto t0 = Clock::now();
  StepLog log;
  const auto segs = sample_windows(prompts, net.config().prompt_len, cfg.batch, rng);
  const DiffusionBatch batch = DiffusionBatch::from_segments(segs);
  const DmNoise noise = draw_dm_noise(cfg.batch, net.config().x_dim(), schedule, rng);
  const FlatGrad g_dm = dm_gradient(net, state.theta, batch, schedule, noise, log.loss_dm);
  if (!finite(g_dm)) {
    log.skipped = true;
  } else {
    log.norm_dm = norm(g_dm);
    apply(state, g_dm, cfg, log);
  }
  log.wall_ms = elapsed_ms(t0);
  return log;
}

StepLog train_step(DiffuserState& state, const EpsNet& net, const FrozenPLM& plm, std::span<const Trajectory> prompts,
                   std::span<const Trajectory> histories, const GuidanceConfig& cfg, const NoiseSchedule& schedule,
                   Rng& rng) {
  const auto t0 = Clock::now();
  StepLog log;
  const std::size_t D = net.config().x_dim();
  const auto segs = sample_windows(prompts, net.config().prompt_len, cfg.batch, rng);
  const DiffusionBatch batch = DiffusionBatch::from_segments(segs);
  const DmNoise noise = draw_dm_noise(cfg.batch, D, schedule, rng);

  const std::size_t hb = std::min(cfg.history_batch, cfg.batch);
  ChainNoise chain = draw_chain_noise(hb, D, schedule, rng);
  std::copy(noise.eps.data(), noise.eps.data() + hb * D, chain.x_n.data());
  const auto hist = sample_history_batch(histories, plm.config.history_len, hb, rng);
  const std::vector<Condition> y(batch.cond.begin(), batch.cond.begin() + static_cast<std::ptrdiff_t>(hb));

  const FlatGrad g_dm = dm_gradient(net, state.theta, batch, schedule, noise, log.loss_dm);
  const bool need_dt = cfg.variant == GradientVariant::DtOnly || (cfg.variant != GradientVariant::DmOnly && cfg.lambda > 0.0);
  FlatGrad g_dt = g_dm.with_values(std::vector<double>(g_dm.size(), 0.0));
  if (need_dt) {
    Graph g;
    BoundParams p(g, state.theta);
    Var l = guidance_loss(g, bind_predictor(net, p), plm, y, hist, schedule, cfg.temperature, chain);
    log.loss_dt = l.value().item();
    if (std::isfinite(*log.loss_dt)) {
      g.backward(l);
      g_dt = FlatGrad::flatten(p.grads());
    } else {
      g_dt.values.assign(g_dt.size(), NAN);
    }
  }
  if (!finite(g_dm) || !finite(g_dt)) {
    log.skipped = true;
    log.wall_ms = elapsed_ms(t0);
    return log;
  }
  log.norm_dm = norm(g_dm);
  log.norm_dt = norm(g_dt);
  if (log.loss_dt) log.cos_angle = cosine(g_dm, g_dt);
  Branch branch = Branch::Aligned;
  const FlatGrad update = combine(g_dm, g_dt, cfg.lambda, cfg.variant, cfg.per_tensor_projection, &branch);
  if (log.loss_dt) log.branch = branch;
  apply(state, update, cfg, log);
  log.wall_ms = elapsed_ms(t0);
  return log;
}

DiffuserResult finetune_prompt_diffuser(const ParamSet& theta, const TaskData& fewshot, const FrozenPLM& plm,
                                        const GuidanceConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (fewshot.prompts.empty() || fewshot.histories.empty()) {
    throw std::invalid_argument("finetune: few-shot task has no data");
  }
  const EpsNet net(cfg.net);
  const NoiseSchedule schedule = make_schedule(cfg.diffusion_steps);
  Rng rng(derive_seed(cfg.seed, 2));
  DiffuserState state{theta, AdamWState::for_params(theta, cfg.optim)};
  DiffuserResult res;
  if (log) write_step_header(*log);
  for (std::size_t it = 0; it < cfg.finetune_iterations; ++it) {
    StepLog s = train_step(state, net, plm, fewshot.prompts, fewshot.histories, cfg, schedule, rng);
    s.iteration = it;
    if (s.skipped) {
      ++res.skipped;
      spdlog::warn("finetune: non-finite gradient at iteration {}; step skipped", it);
    }
    if (log) write_step_row(*log, s);
    res.phase2.push_back(s);
  }
  res.theta = std::move(state.theta);
  return res;
}

ParamSet denoising_pretrain(std::span<const TaskData> train_tasks, const GuidanceConfig& cfg,
                            std::vector<double>* losses, std::size_t* skipped, std::optional<ParamSet> init) {
  cfg.validate();
  std::vector<Trajectory> corpus;
  for (const auto& t : train_tasks) corpus.insert(corpus.end(), t.prompts.begin(), t.prompts.end());
  if (corpus.empty() && cfg.pretrain_iterations > 0) throw std::invalid_argument("denoising_pretrain: no prompts");

  const EpsNet net(cfg.net);
  const NoiseSchedule schedule = make_schedule(cfg.diffusion_steps);
  Rng rng(derive_seed(cfg.seed, 1));
  ParamSet theta = init ? std::move(*init) : net.init(rng);
  AdamWConfig optim = cfg.optim;
  optim.lr = cfg.pretrain_lr;
  DiffuserState state{theta, AdamWState::for_params(theta, optim)};
  for (std::size_t it = 0; it < cfg.pretrain_iterations; ++it) {
    const StepLog s = dm_step(state, net, corpus, cfg, schedule, rng);
    if (s.skipped && skipped) ++*skipped;
    if (losses) losses->push_back(s.loss_dm);
  }
  return std::move(state.theta);
}

DiffuserResult train_prompt_diffuser(std::span<const TaskData> train_tasks, const TaskData* fewshot,
                                     const FrozenPLM& plm, const GuidanceConfig& cfg, std::ostream* log,
                                     std::optional<ParamSet> init) {
  DiffuserResult res;
  ParamSet theta = denoising_pretrain(train_tasks, cfg, &res.phase1_losses, &res.skipped, std::move(init));
  if (!fewshot || fewshot->prompts.empty() || fewshot->histories.empty()) {
    spdlog::warn("train_prompt_diffuser: no few-shot data; fine-tuning skipped (zero-shot mode)");
    res.theta = std::move(theta);
    res.zero_shot = true;
    return res;
  }
  DiffuserResult ft = finetune_prompt_diffuser(theta, *fewshot, plm, cfg, log);
  ft.phase1_losses = std::move(res.phase1_losses);
  ft.skipped += res.skipped;
  return ft;
}

}  // namespace pdiff
