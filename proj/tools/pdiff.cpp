#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pdiff/checkpoint.hpp"
#include "pdiff/harness.hpp"

namespace fs = std::filesystem;
using namespace pdiff;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string profile = "desk";
};

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
};

ExperimentConfig base_config(const std::string& profile) {
  if (profile == "desk") return ExperimentConfig::desk();
  if (profile == "full") return ExperimentConfig{};
  throw CLI::ValidationError("--profile", "expected desk or full");
}

ExperimentConfig load_config(const CommonOpts& o) {
  const ExperimentConfig base = base_config(o.profile);
  return o.config_path.empty() ? base : ExperimentConfig::load(o.config_path, base);
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

void finish(const fs::path& manifest_path, const std::string& command, const ExperimentConfig& cfg,
            std::vector<std::uint64_t> seeds, std::vector<std::string> outputs, const Timer& timer) {
  write_manifest(manifest_path, Manifest{command, cfg.digest(), cfg.canonical(), std::move(seeds),
                                         std::move(outputs), timer.ms()});
}

TaskSplit split_named(Family f, const std::string& name) {
  if (name == "default") return default_split(f);
  if (name == "ood") {
    if (f != Family::Dir2d) throw std::invalid_argument("the ood split exists only for dir-2d");
    return ood_split();
  }
  throw std::invalid_argument("unknown split '" + name + "'");
}

/// Sidecar describing how a PLM checkpoint was produced; eval and
/// train-diffuser rebuild the data from it.
struct PlmMeta {
  Family family;
  std::string split;
  std::uint64_t seed;
  ExperimentConfig config;
};

fs::path meta_path(const fs::path& ckpt) { return fs::path(ckpt.string() + ".meta.json"); }

void save_meta(const fs::path& ckpt, const PlmMeta& m) {
  nlohmann::ordered_json j;
  j["family"] = to_string(m.family);
  j["split"] = m.split;
  j["seed"] = m.seed;
  j["config"] = nlohmann::ordered_json::parse(m.config.canonical());
  std::ofstream out(meta_path(ckpt), std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + meta_path(ckpt).string());
  out << j.dump(2) << '\n';
}

PlmMeta load_meta(const fs::path& ckpt) {
  std::ifstream in(meta_path(ckpt));
  if (!in) throw std::runtime_error("missing " + meta_path(ckpt).string());
  const auto j = nlohmann::json::parse(in);
  return PlmMeta{parse_family(j.at("family").get<std::string>()), j.at("split").get<std::string>(),
                 j.at("seed").get<std::uint64_t>(), ExperimentConfig::parse(j.at("config").dump())};
}

std::vector<Family> parse_families(const std::vector<std::string>& names) {
  std::vector<Family> out;
  for (const auto& n : names) out.push_back(parse_family(n));
  return out;
}

Progress stderr_progress(const Timer& timer) {
  return [&timer](const std::string& msg) { spdlog::info("[{:.0f}s] {}", timer.ms() / 1000.0, msg); };
}

// ------------------------------------------------------------ subcommands

int gen_data(const std::string& family_name, const std::string& tier_name, std::size_t episodes, std::uint64_t seed,
             const std::string& split_name, const fs::path& out, const std::string& cmd) {
  const Timer timer;
  const Family family = parse_family(family_name);
  const Tier tier = parse_tier(tier_name);
  const TaskSplit split = split_named(family, split_name);
  fs::create_directories(out);

  std::vector<std::size_t> tasks = split.train;
  tasks.insert(tasks.end(), split.test.begin(), split.test.end());
  std::sort(tasks.begin(), tasks.end());
  tasks.erase(std::unique(tasks.begin(), tasks.end()), tasks.end());

  std::map<std::size_t, std::vector<Trajectory>> raw;
  for (std::size_t idx : tasks)
    raw[idx] = collect(make_task(family, idx), tier, episodes, dataset_seed(seed, family, idx, tier));
  std::vector<std::vector<Trajectory>> train;
  for (std::size_t idx : split.train) train.push_back(raw[idx]);
  const NormStats stats = fit_norm_stats(std::span<const std::vector<Trajectory>>(train));

  std::vector<std::string> outputs;
  for (std::size_t idx : tasks) {
    Dataset ds;
    ds.header.family = family;
    ds.header.task_index = idx;
    ds.header.tier = to_string(tier);
    ds.header.seed = dataset_seed(seed, family, idx, tier);
    ds.header.stats = stats;
    ds.trajectories = raw[idx];
    const std::string name = dataset_filename(family, idx, to_string(tier));
    save_dataset(out / name, ds);
    outputs.push_back(name);
  }
  ExperimentConfig cfg;
  finish(out / "manifest.json", cmd, cfg, {seed}, outputs, timer);
  std::cout << "wrote " << outputs.size() << " datasets to " << out.string() << '\n';
  return 0;
}

int pretrain_plm_cmd(const CommonOpts& o, const std::string& family_name, const std::string& split_name,
                     std::uint64_t seed, const fs::path& out, const std::string& cmd) {
  const Timer timer;
  const ExperimentConfig cfg = load_config(o);
  const Family family = parse_family(family_name);
  const FamilyBundle bundle = build_family(family, split_named(family, split_name), cfg);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path log_path = fs::path(out.string() + ".loss.csv");
  std::ofstream log(log_path, std::ios::binary);
  const PretrainResult r = pretrain_plm(bundle, cfg, seed, &log);
  save_checkpoint(out, r.params);
  save_meta(out, PlmMeta{family, split_name, seed, cfg});
  finish(fs::path(out.string() + ".manifest.json"), cmd, cfg, {seed},
         {out.filename().string(), meta_path(out).filename().string(), log_path.filename().string()}, timer);
  std::cout << "final loss " << fmt_real(r.losses.empty() ? 0.0 : r.losses.back()) << ", checkpoint "
            << out.string() << '\n';
  return 0;
}

int train_diffuser_cmd(const fs::path& plm_path, const std::string& variant, std::optional<double> lambda,
                       const std::string& tier_name, const fs::path& out, const std::string& cmd) {
  const Timer timer;
  const PlmMeta meta = load_meta(plm_path);
  const ExperimentConfig& cfg = meta.config;
  const ParamSet plm_params = load_checkpoint(plm_path);
  const FrozenPLM plm{&plm_params, cfg.pretrain.model};
  const FamilyBundle bundle = build_family(meta.family, split_named(meta.family, meta.split), cfg);
  GuidanceConfig g = guidance_for_seed(cfg, meta.seed);
  if (!variant.empty()) g.variant = parse_variant(variant);
  if (lambda) g.lambda = *lambda;
  g.validate();
  const Tier tier = parse_tier(tier_name);
  fs::create_directories(out);

  const ParamSet theta0 = pretrain_diffuser(bundle, cfg, meta.seed);
  save_checkpoint(out / "theta0.ckpt", theta0);
  std::vector<std::string> outputs{"theta0.ckpt"};
  for (std::size_t task : bundle.test_tasks(cfg.max_test_tasks)) {
    GuidanceConfig gt = g;
    gt.seed = derive_seed(g.seed, 0x100 + task);
    const std::string stem = "task-" + std::to_string(task);
    std::ofstream log(out / (stem + ".log.csv"), std::ios::binary);
    const DiffuserResult r = finetune_prompt_diffuser(theta0, bundle.fewshot_task(task, tier), plm, gt, &log);
    save_checkpoint(out / (stem + ".ckpt"), r.theta);
    outputs.push_back(stem + ".ckpt");
    outputs.push_back(stem + ".log.csv");
    std::cout << "task " << task << ": " << r.phase2.size() << " steps, " << r.skipped << " skipped\n";
  }
  finish(out / "manifest.json", cmd, cfg, {meta.seed}, outputs, timer);
  return 0;
}

std::shared_ptr<DiffuserModel> load_diffuser(const fs::path& dir, const GuidanceConfig& g,
                                             std::span<const std::size_t> tasks, bool zero_shot) {
  auto model = std::make_shared<DiffuserModel>(
      DiffuserModel{EpsNet(g.net), make_schedule(g.diffusion_steps), g.temperature, {}, load_checkpoint(dir / "theta0.ckpt")});
  if (zero_shot) return model;
  for (std::size_t task : tasks) {
    const fs::path p = dir / ("task-" + std::to_string(task) + ".ckpt");
    if (!fs::exists(p)) throw std::runtime_error("missing " + p.string());
    model->per_task[task] = load_checkpoint(p);
  }
  return model;
}

int eval_cmd(const fs::path& plm_path, const std::string& provider_name, const std::string& family_name,
             std::optional<std::size_t> episodes, std::uint64_t seed, const std::string& tier_name,
             const std::string& data_tier_name, const fs::path& diffuser_dir, bool zero_shot, bool finetune, const fs::path& out,
             const std::string& cmd) {
  const Timer timer;
  const PlmMeta meta = load_meta(plm_path);
  const ExperimentConfig& cfg = meta.config;
  const Family family = parse_family(family_name);
  if (family != meta.family) {
    throw std::invalid_argument("checkpoint was trained on " + to_string(meta.family) + ", not " + family_name);
  }
  const ParamSet plm_params = load_checkpoint(plm_path);
  const FrozenPLM plm{&plm_params, cfg.pretrain.model};
  const FamilyBundle bundle = build_family(family, split_named(family, meta.split), cfg);
  const std::vector<std::size_t> tasks = bundle.test_tasks(cfg.max_test_tasks);
  const std::size_t len = cfg.pretrain.model.prompt_len;
  const ProviderKind kind = parse_provider(provider_name);
  const Tier tier = parse_tier(tier_name);

  PromptProvider provider;
  switch (kind) {
    case ProviderKind::None: provider = none_provider(); break;
    case ProviderKind::RandomTrajectory: provider = trajectory_provider(bundle, Tier::Random, len); break;
    case ProviderKind::ExpertTrajectory: provider = trajectory_provider(bundle, Tier::Expert, len); break;
    case ProviderKind::SoftPrompt:
      provider = soft_prompt_provider(bundle, plm, tier, parse_tier(data_tier_name), cfg.soft_prompt_steps,
                                      cfg.soft_prompt_lr, cfg.soft_prompt_batch);
      break;
    case ProviderKind::Diffuser: {
      if (diffuser_dir.empty()) throw std::invalid_argument("--provider diffuser needs --diffuser DIR");
      const GuidanceConfig g = guidance_for_seed(cfg, meta.seed);
      auto model = load_diffuser(diffuser_dir, g, tasks, zero_shot);
      provider = diffuser_provider(model, zero_shot ? target_condition(bundle.stats, bundle.target_return, len)
                                                    : fewshot_condition(bundle, tier, len));
      break;
    }
  }
  if (finetune && kind != ProviderKind::None && kind != ProviderKind::RandomTrajectory &&
      kind != ProviderKind::ExpertTrajectory) {
    throw std::invalid_argument("--finetune-plm supports only none and trajectory providers");
  }
  const std::size_t n_episodes = episodes.value_or(cfg.eval_episodes);
  EvalReport r = finetune ? evaluate_finetuned(plm, bundle, provider, parse_tier(data_tier_name), cfg.pretrain,
                                               cfg.plm_finetune_epochs, tasks, n_episodes, seed)
                          : evaluate(plm, bundle.stats, provider, family, tasks, n_episodes, bundle.target_return, seed);
  r.config_digest = cfg.digest();
  const CsvTable table = report_table(std::span<const EvalReport>(&r, 1));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_csv(out, table);
  write_csv(std::cout, table);
  std::cout << "mean_return " << fmt_real(r.mean()) << " std " << fmt_real(r.stddev()) << '\n';
  finish(fs::path(out.string() + ".manifest.json"), cmd, cfg, {seed}, {out.filename().string()}, timer);
  return 0;
}

int ablate_cmd(const CommonOpts& o, const std::string& which, const std::vector<std::string>& family_names,
               const std::vector<double>& lambdas, const std::vector<std::string>& variant_names,
               const std::vector<std::uint64_t>& seeds, const fs::path& out, const std::string& cmd) {
  const Timer timer;
  ExperimentConfig cfg = load_config(o);
  if (!seeds.empty()) cfg.seeds = seeds;
  const Progress progress = stderr_progress(timer);
  CsvTable table;
  if (which == "init") {
    table = ablation_init_grid(cfg, family_names.empty() ? Family::Vel : parse_family(family_names.front()), progress);
  } else if (which == "guidance") {
    const auto fams = parse_families(family_names.empty() ? std::vector<std::string>{"dir-1d", "vel", "dir-2d"}
                                                          : family_names);
    std::vector<GradientVariant> variants;
    for (const auto& v : variant_names.empty() ? std::vector<std::string>{"dm-only", "dt-only", "naive-sum", "projected"} : variant_names)
      variants.push_back(parse_variant(v));
    table = ablation_guidance(cfg, fams, variants, progress);
  } else if (which == "lambda") {
    const std::vector<double> ls = lambdas.empty() ? std::vector<double>{0.0, 0.5, 1.0, 2.0, 5.0} : lambdas;
    table = ablation_lambda(cfg, ls, family_names.empty() ? Family::Vel : parse_family(family_names.front()), progress);
  } else if (which == "ood") {
    table = ablation_ood(cfg, progress);
  } else if (which == "order") {
    const auto fams = parse_families(family_names.empty() ? std::vector<std::string>{"dir-1d", "vel"} : family_names);
    table = prompt_ordering(cfg, fams, progress);
  } else {
    throw CLI::ValidationError("ablation", "expected init, guidance, lambda, ood or order");
  }
  fs::create_directories(out);
  const std::string name = "ablation_" + which + ".csv";
  save_csv(out / name, table);
  write_csv(std::cout, table);
  finish(out / ("ablation_" + which + ".manifest.json"), cmd, cfg, cfg.seeds, {name}, timer);
  return 0;
}

/// Collapses the seed column: one row per remaining key with mean, std and
/// count of every numeric measure.
CsvTable summarize(const CsvTable& in) {
  static const std::vector<std::string> measures{"mean_return", "relative_return", "std_return"};
  std::vector<std::size_t> keys, vals;
  for (std::size_t c = 0; c < in.header.size(); ++c) {
    const std::string& h = in.header[c];
    if (h == "seed" || h == "task" || h == "episodes" || h == "failed" || h == "config_digest") continue;
    if (std::find(measures.begin(), measures.end(), h) != measures.end()) {
      if (h != "std_return") vals.push_back(c);
    } else {
      keys.push_back(c);
    }
  }
  if (vals.empty()) throw std::invalid_argument("report: no mean_return column");
  CsvTable t;
  for (std::size_t c : keys) t.header.push_back(in.header[c]);
  for (std::size_t c : vals) {
    t.header.push_back(in.header[c] + "_mean");
    t.header.push_back(in.header[c] + "_std");
  }
  t.header.push_back("n");

  std::vector<std::vector<std::string>> order;
  std::map<std::vector<std::string>, std::vector<std::vector<double>>> groups;
  for (const auto& row : in.rows) {
    std::vector<std::string> k;
    for (std::size_t c : keys) k.push_back(row[c]);
    if (!groups.count(k)) order.push_back(k);
    auto& g = groups[k];
    g.resize(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i)
      if (!row[vals[i]].empty()) g[i].push_back(std::stod(row[vals[i]]));
  }
  for (const auto& k : order) {
    std::vector<std::string> row = k;
    std::size_t n = 0;
    for (const auto& xs : groups[k]) {
      n = std::max(n, xs.size());
      if (xs.empty()) {
        row.insert(row.end(), {"", ""});
        continue;
      }
      double m = 0.0;
      for (double x : xs) m += x;
      m /= static_cast<double>(xs.size());
      double v = 0.0;
      for (double x : xs) v += (x - m) * (x - m);
      const double sd = xs.size() > 1 ? std::sqrt(v / static_cast<double>(xs.size() - 1)) : 0.0;
      row.push_back(fmt_real(m));
      row.push_back(fmt_real(sd));
    }
    row.push_back(std::to_string(n));
    t.add(std::move(row));
  }
  return t;
}

int report_cmd(const std::vector<std::string>& inputs, const fs::path& out, const std::string& cmd) {
  const Timer timer;
  CsvTable merged;
  for (const auto& in : inputs) {
    const CsvTable t = load_csv(in);
    if (merged.header.empty()) merged.header = t.header;
    if (t.header != merged.header) throw std::invalid_argument("report: " + in + " has a different schema");
    for (const auto& r : t.rows) merged.add(r);
  }
  const CsvTable summary = summarize(merged);
  write_csv(std::cout, summary);
  if (!out.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_csv(out, summary);
    finish(fs::path(out.string() + ".manifest.json"), cmd, ExperimentConfig{}, {}, {out.filename().string()}, timer);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pdiff: prompt diffuser experiments on point-mass task families"};
  app.require_subcommand(1);
  app.set_version_flag("--version", git_describe());
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();
  const std::string cmd = command_line(argc, argv);

  CommonOpts common;
  auto add_config = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON patch over the profile")->check(CLI::ExistingFile);
    sub->add_option("--profile", common.profile, "desk|full")->capture_default_str();
  };

  std::string family = "dir-1d", tier = "expert", data_tier = "expert", split = "default", provider, variant;
  std::size_t episodes = 20;
  std::optional<std::size_t> eval_episodes;
  std::uint64_t seed = 0;
  std::optional<double> lambda;
  std::string out, plm, diffuser;
  bool zero_shot = false;

  auto* gen = app.add_subcommand("gen-data", "Collect scripted-policy datasets for every task of a split");
  gen->add_option("--family", family)->required();
  gen->add_option("--tier", tier)->capture_default_str();
  gen->add_option("--episodes", episodes)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed)->capture_default_str();
  gen->add_option("--split", split, "default|ood")->capture_default_str();
  gen->add_option("--out", out)->required();

  auto* pre = app.add_subcommand("pretrain-plm", "Pre-train the prompt-conditioned transformer");
  add_config(pre);
  pre->add_option("--family", family)->required();
  pre->add_option("--split", split)->capture_default_str();
  pre->add_option("--seed", seed)->capture_default_str();
  pre->add_option("--out", out, "checkpoint path")->required();

  auto* td = app.add_subcommand("train-diffuser", "Denoising pre-training then guided fine-tuning per test task");
  td->add_option("--plm", plm)->required()->check(CLI::ExistingFile);
  td->add_option("--variant", variant, "projected|dm-only|dt-only|naive-sum");
  td->add_option("--lambda", lambda);
  td->add_option("--tier", tier, "few-shot data tier")->capture_default_str();
  td->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "Roll out the frozen transformer under a prompt provider");
  ev->add_option("--plm", plm)->required()->check(CLI::ExistingFile);
  ev->add_option("--provider", provider, "none|random-trajectory|expert-trajectory|soft-prompt|diffuser")->required();
  ev->add_option("--family", family)->required();
  ev->add_option("--episodes", eval_episodes)->check(CLI::PositiveNumber);
  ev->add_option("--seed", seed)->capture_default_str();
  ev->add_option("--tier", tier, "init tier for soft prompts and diffuser conditions")->capture_default_str();
  ev->add_option("--data-tier", data_tier, "soft-prompt tuning and PLM fine-tune data tier")->capture_default_str();
  ev->add_option("--diffuser", diffuser, "train-diffuser output directory");
  ev->add_flag("--zero-shot", zero_shot, "use the phase-1 diffuser with a target-return condition");
  bool finetune_plm = false;
  ev->add_flag("--finetune-plm", finetune_plm, "fine-tune every PLM weight on each task's few-shot data first");
  std::string eval_out = "eval_report.csv";
  ev->add_option("--out", eval_out)->capture_default_str();

  auto* ab = app.add_subcommand("ablate", "Run an ablation and write its CSV");
  add_config(ab);
  std::string which;
  std::vector<std::string> families, variants;
  std::vector<double> lambdas;
  std::vector<std::uint64_t> seeds;
  ab->add_option("which", which, "init|guidance|lambda|ood|order")->required();
  ab->add_option("--families", families);
  ab->add_option("--variants", variants);
  ab->add_option("--lambdas", lambdas);
  ab->add_option("--seeds", seeds);
  std::string ab_out = "results";
  ab->add_option("--out", ab_out)->capture_default_str();

  auto* rep = app.add_subcommand("report", "Aggregate result CSVs over seeds");
  std::vector<std::string> inputs;
  std::string rep_out;
  rep->add_option("inputs", inputs)->required()->check(CLI::ExistingFile);
  rep->add_option("--out", rep_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (gen->parsed()) return gen_data(family, tier, episodes, seed, split, out, cmd);
    if (pre->parsed()) return pretrain_plm_cmd(common, family, split, seed, out, cmd);
    if (td->parsed()) return train_diffuser_cmd(plm, variant, lambda, tier, out, cmd);
    if (ev->parsed())
      return eval_cmd(plm, provider, family, eval_episodes, seed, tier, data_tier, diffuser, zero_shot, finetune_plm, eval_out, cmd);
    if (ab->parsed()) return ablate_cmd(common, which, families, lambdas, variants, seeds, ab_out, cmd);
    if (rep->parsed()) return report_cmd(inputs, rep_out, cmd);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
