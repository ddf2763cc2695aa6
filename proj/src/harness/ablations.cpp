#include "pdiff/harness.hpp"

namespace pdiff {

namespace {

constexpr std::array<Tier, 3> kTiers{Tier::Expert, Tier::Medium, Tier::Random};

void note(const Progress& p, const std::string& msg) {
  if (p) p(msg);
}

/// Everything one seed of one family needs: data, frozen PLM and the
/// diffuser after its denoising-only phase.
struct SeedRun {
  const FamilyBundle* bundle;
  const ExperimentConfig* cfg;
  std::uint64_t seed;
  ParamSet plm_params;
  ParamSet theta0;
  std::vector<std::size_t> tasks;

  FrozenPLM plm() const { return FrozenPLM{&plm_params, cfg->pretrain.model}; }
  std::uint64_t eval_seed() const { return derive_seed(seed, 0x33); }

  EvalReport eval(const PromptProvider& provider) const {
    EvalReport r = evaluate(plm(), bundle->stats, provider, bundle->family, tasks, cfg->eval_episodes,
                            bundle->target_return, eval_seed());
    r.config_digest = cfg->digest();
    return r;
  }

  std::shared_ptr<DiffuserModel> finetuned(const GuidanceConfig& g, Tier data_tier) const {
    auto model = std::make_shared<DiffuserModel>(DiffuserModel{EpsNet(g.net), make_schedule(g.diffusion_steps),
                                                               g.temperature, {}, theta0});
    for (std::size_t task : tasks) {
      GuidanceConfig gt = g;
      gt.seed = derive_seed(g.seed, 0x100 + task);
      model->per_task[task] = finetune_prompt_diffuser(theta0, bundle->fewshot_task(task, data_tier), plm(), gt).theta;
    }
    return model;
  }
};

SeedRun start(const FamilyBundle& bundle, const ExperimentConfig& cfg, std::uint64_t seed, bool with_diffuser,
              const Progress& progress) {
  note(progress, to_string(bundle.family) + " seed " + std::to_string(seed) + ": pre-training PLM");
  SeedRun run{&bundle, &cfg, seed, pretrain_plm(bundle, cfg, seed).params, {}, bundle.test_tasks(cfg.max_test_tasks)};
  if (with_diffuser) {
    note(progress, to_string(bundle.family) + " seed " + std::to_string(seed) + ": diffuser phase 1");
    run.theta0 = pretrain_diffuser(bundle, cfg, seed);
  }
  return run;
}

}  // namespace

CsvTable prompt_ordering(const ExperimentConfig& cfg, std::span<const Family> families, const Progress& progress) {
  CsvTable t{{"family", "seed", "provider", "mean_return"}, {}};
  for (Family f : families) {
    const FamilyBundle bundle = build_family(f, default_split(f), cfg);
    for (std::uint64_t seed : cfg.seeds) {
      const SeedRun run = start(bundle, cfg, seed, false, progress);
      for (Tier tier : {Tier::Expert, Tier::Random}) {
        const EvalReport r = run.eval(trajectory_provider(bundle, tier, cfg.pretrain.model.prompt_len));
        t.add({to_string(f), std::to_string(seed), r.provider, fmt_real(r.mean())});
      }
    }
  }
  return t;
}

CsvTable ablation_guidance(const ExperimentConfig& cfg, std::span<const Family> families,
                           std::span<const GradientVariant> variants, const Progress& progress) {
  CsvTable t{{"family", "seed", "variant", "mean_return", "relative_return"}, {}};
  for (Family f : families) {
    const FamilyBundle bundle = build_family(f, default_split(f), cfg);
    for (std::uint64_t seed : cfg.seeds) {
      const SeedRun run = start(bundle, cfg, seed, true, progress);
      std::vector<std::pair<GradientVariant, double>> results;
      for (GradientVariant v : variants) {
        note(progress, to_string(f) + " seed " + std::to_string(seed) + ": fine-tuning " + to_string(v));
        GuidanceConfig g = guidance_for_seed(cfg, seed);
        g.variant = v;
        g.lambda = 1.0;
        const auto model = run.finetuned(g, Tier::Expert);
        const EvalReport r = run.eval(diffuser_provider(model, fewshot_condition(bundle, Tier::Expert, g.net.prompt_len)));
        results.emplace_back(v, r.mean());
      }
      std::optional<double> base;
      for (const auto& [v, m] : results)
        if (v == GradientVariant::DmOnly) base = m;
      for (const auto& [v, m] : results) {
        t.add({to_string(f), std::to_string(seed), to_string(v), fmt_real(m), base ? fmt_real(m - *base) : ""});
      }
    }
  }
  return t;
}

CsvTable ablation_lambda(const ExperimentConfig& cfg, std::span<const double> lambdas, Family family,
                         const Progress& progress) {
  CsvTable t{{"family", "seed", "lambda", "mean_return"}, {}};
  const FamilyBundle bundle = build_family(family, default_split(family), cfg);
  for (std::uint64_t seed : cfg.seeds) {
    const SeedRun run = start(bundle, cfg, seed, true, progress);
    for (double lambda : lambdas) {
      note(progress, to_string(family) + " seed " + std::to_string(seed) + ": lambda " + fmt_real(lambda));
      GuidanceConfig g = guidance_for_seed(cfg, seed);
      g.variant = GradientVariant::Projected;
      g.lambda = lambda;
      const auto model = run.finetuned(g, Tier::Expert);
      const EvalReport r = run.eval(diffuser_provider(model, fewshot_condition(bundle, Tier::Expert, g.net.prompt_len)));
      t.add({to_string(family), std::to_string(seed), fmt_real(lambda), fmt_real(r.mean())});
    }
  }
  return t;
}

CsvTable ablation_init_grid(const ExperimentConfig& cfg, Family family, const Progress& progress) {
  CsvTable t{{"family", "seed", "provider", "init_tier", "data_tier", "mean_return"}, {}};
  const FamilyBundle bundle = build_family(family, default_split(family), cfg);
  const std::size_t len = cfg.pretrain.model.prompt_len;
  for (std::uint64_t seed : cfg.seeds) {
    const SeedRun run = start(bundle, cfg, seed, true, progress);
    for (Tier data : kTiers) {
      note(progress, to_string(family) + " seed " + std::to_string(seed) + ": fine-tuning on " + to_string(data));
      const auto model = run.finetuned(guidance_for_seed(cfg, seed), data);
      for (Tier init : kTiers) {
        const EvalReport soft = run.eval(soft_prompt_provider(bundle, run.plm(), init, data, cfg.soft_prompt_steps,
                                                              cfg.soft_prompt_lr, cfg.soft_prompt_batch));
        t.add({to_string(family), std::to_string(seed), soft.provider, to_string(init), to_string(data),
               fmt_real(soft.mean())});
        const EvalReport diff = run.eval(diffuser_provider(model, fewshot_condition(bundle, init, len)));
        t.add({to_string(family), std::to_string(seed), diff.provider, to_string(init), to_string(data),
               fmt_real(diff.mean())});
      }
    }
  }
  return t;
}

CsvTable ablation_ood(const ExperimentConfig& cfg, const Progress& progress) {
  CsvTable t{{"family", "seed", "setting", "provider", "mean_return"}, {}};
  const FamilyBundle bundle = build_family(Family::Dir2d, ood_split(), cfg);
  const std::size_t len = cfg.pretrain.model.prompt_len;
  for (std::uint64_t seed : cfg.seeds) {
    SeedRun run = start(bundle, cfg, seed, true, progress);
    run.tasks = bundle.test_tasks();
    const std::string fam = to_string(Family::Dir2d), s = std::to_string(seed);
    auto row = [&](const std::string& setting, const EvalReport& r) {
      t.add({fam, s, setting, r.provider, fmt_real(r.mean())});
    };
    row("few-shot", run.eval(trajectory_provider(bundle, Tier::Expert, len)));
    row("few-shot", run.eval(soft_prompt_provider(bundle, run.plm(), Tier::Expert, Tier::Expert, cfg.soft_prompt_steps,
                                                  cfg.soft_prompt_lr, cfg.soft_prompt_batch)));
    note(progress, fam + " seed " + s + ": few-shot fine-tuning");
    const auto tuned = run.finetuned(guidance_for_seed(cfg, seed), Tier::Expert);
    row("few-shot", run.eval(diffuser_provider(tuned, fewshot_condition(bundle, Tier::Expert, len))));

    row("zero-shot", run.eval(none_provider()));
    const GuidanceConfig g = guidance_for_seed(cfg, seed);
    auto zero = std::make_shared<DiffuserModel>(
        DiffuserModel{EpsNet(g.net), make_schedule(g.diffusion_steps), g.temperature, {}, run.theta0});
    row("zero-shot", run.eval(diffuser_provider(zero, target_condition(bundle.stats, bundle.target_return, len))));
  }
  return t;
}

}  // namespace pdiff
