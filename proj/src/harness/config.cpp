#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "pdiff/harness.hpp"

namespace pdiff {

namespace {

using nlohmann::json;

json to_json(const ExperimentConfig& c) {
  const PLMConfig& m = c.pretrain.model;
  const GuidanceConfig& g = c.guidance;
  json targets = json::object();
  for (const auto& [f, v] : c.target_return) targets[to_string(f)] = v;
  return json{
      {"plm",
       {{"layers", m.layers},
        {"heads", m.heads},
        {"width", m.width},
        {"dropout", m.dropout},
        {"prompt_len", m.prompt_len},
        {"history_len", m.history_len}}},
      {"pretrain",
       {{"iterations", c.pretrain.iterations},
        {"batch", c.pretrain.batch},
        {"grad_clip", c.pretrain.grad_clip},
        {"no_prompt_prob", c.pretrain.no_prompt_prob},
        {"finetune_epochs", c.plm_finetune_epochs},
        {"lr", c.pretrain.optim.lr},
        {"weight_decay", c.pretrain.optim.weight_decay},
        {"beta1", c.pretrain.optim.beta1},
        {"beta2", c.pretrain.optim.beta2}}},
      {"diffuser",
       {{"hidden", g.net.hidden},
        {"time_dim", g.net.time_dim},
        {"step_dim", g.net.step_dim},
        {"diffusion_steps", g.diffusion_steps},
        {"lambda", g.lambda},
        {"temperature", g.temperature},
        {"batch", g.batch},
        {"history_batch", g.history_batch},
        {"pretrain_iterations", g.pretrain_iterations},
        {"finetune_iterations", g.finetune_iterations},
        {"variant", to_string(g.variant)},
        {"per_tensor_projection", g.per_tensor_projection},
        {"grad_clip", g.grad_clip},
        {"lr", g.optim.lr},
        {"pretrain_lr", g.pretrain_lr},
        {"weight_decay", g.optim.weight_decay},
        {"beta1", g.optim.beta1},
        {"beta2", g.optim.beta2}}},
      {"data",
       {{"prompt_episodes", c.prompt_episodes},
        {"history_episodes", c.history_episodes},
        {"fewshot_episodes", c.fewshot_episodes},
        {"seed", c.data_seed}}},
      {"eval", {{"episodes", c.eval_episodes}, {"max_test_tasks", c.max_test_tasks}, {"target_return", targets}}},
      {"soft_prompt", {{"steps", c.soft_prompt_steps}, {"lr", c.soft_prompt_lr}, {"batch", c.soft_prompt_batch}}},
      {"seeds", c.seeds},
  };
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  const json& m = j.at("plm");
  PLMConfig& pm = c.pretrain.model;
  m.at("layers").get_to(pm.layers);
  m.at("heads").get_to(pm.heads);
  m.at("width").get_to(pm.width);
  m.at("dropout").get_to(pm.dropout);
  m.at("prompt_len").get_to(pm.prompt_len);
  m.at("history_len").get_to(pm.history_len);
  pm.validate();

  const json& p = j.at("pretrain");
  p.at("iterations").get_to(c.pretrain.iterations);
  p.at("batch").get_to(c.pretrain.batch);
  p.at("grad_clip").get_to(c.pretrain.grad_clip);
  p.at("no_prompt_prob").get_to(c.pretrain.no_prompt_prob);
  p.at("finetune_epochs").get_to(c.plm_finetune_epochs);
  p.at("lr").get_to(c.pretrain.optim.lr);
  p.at("weight_decay").get_to(c.pretrain.optim.weight_decay);
  p.at("beta1").get_to(c.pretrain.optim.beta1);
  p.at("beta2").get_to(c.pretrain.optim.beta2);

  const json& d = j.at("diffuser");
  GuidanceConfig& g = c.guidance;
  d.at("hidden").get_to(g.net.hidden);
  d.at("time_dim").get_to(g.net.time_dim);
  d.at("step_dim").get_to(g.net.step_dim);
  d.at("diffusion_steps").get_to(g.diffusion_steps);
  d.at("lambda").get_to(g.lambda);
  d.at("temperature").get_to(g.temperature);
  d.at("batch").get_to(g.batch);
  d.at("history_batch").get_to(g.history_batch);
  d.at("pretrain_iterations").get_to(g.pretrain_iterations);
  d.at("finetune_iterations").get_to(g.finetune_iterations);
  g.variant = parse_variant(d.at("variant").get<std::string>());
  d.at("per_tensor_projection").get_to(g.per_tensor_projection);
  d.at("grad_clip").get_to(g.grad_clip);
  d.at("lr").get_to(g.optim.lr);
  d.at("pretrain_lr").get_to(g.pretrain_lr);
  d.at("weight_decay").get_to(g.optim.weight_decay);
  d.at("beta1").get_to(g.optim.beta1);
  d.at("beta2").get_to(g.optim.beta2);
  g.net.prompt_len = pm.prompt_len;
  g.net.max_timestep = pm.max_timestep;
  g.validate();

  const json& data = j.at("data");
  data.at("prompt_episodes").get_to(c.prompt_episodes);
  data.at("history_episodes").get_to(c.history_episodes);
  data.at("fewshot_episodes").get_to(c.fewshot_episodes);
  data.at("seed").get_to(c.data_seed);

  const json& e = j.at("eval");
  e.at("episodes").get_to(c.eval_episodes);
  e.at("max_test_tasks").get_to(c.max_test_tasks);
  c.target_return.clear();
  for (const auto& [k, v] : e.at("target_return").items()) c.target_return[parse_family(k)] = v.get<double>();

  const json& s = j.at("soft_prompt");
  s.at("steps").get_to(c.soft_prompt_steps);
  s.at("lr").get_to(c.soft_prompt_lr);
  s.at("batch").get_to(c.soft_prompt_batch);
  j.at("seeds").get_to(c.seeds);
  return c;
}

void check_keys(const json& patch, const json& base, const std::string& path) {
  if (!patch.is_object()) return;
  for (const auto& [k, v] : patch.items()) {
    const std::string here = path.empty() ? k : path + "." + k;
    if (!base.contains(k)) throw std::invalid_argument("config: unknown key '" + here + "'");
    if (here != "eval.target_return") check_keys(v, base.at(k), here);
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.pretrain.model.layers = 2;
  c.pretrain.model.width = 32;
  c.pretrain.model.history_len = 10;
  c.pretrain.iterations = 1500;
  c.pretrain.batch = 16;
  c.guidance.pretrain_iterations = 2000;
  c.guidance.pretrain_lr = 1e-3;
  c.guidance.finetune_iterations = 100;
  c.guidance.history_batch = 8;
  c.prompt_episodes = 10;
  c.history_episodes = 10;
  c.soft_prompt_steps = 100;
  c.max_test_tasks = 3;
  return c;
}

std::string ExperimentConfig::canonical() const { return to_json(*this).dump(); }

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::digest() const {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << fnv1a64(canonical());
  return os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const ExperimentConfig& base) {
  try {
    const json patch = json::parse(text);
    if (!patch.is_object()) throw std::invalid_argument("config: top level must be an object");
    json merged = to_json(base);
    check_keys(patch, merged, "");
    merged.merge_patch(patch);
    return from_json(merged);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) { return parse(text, ExperimentConfig{}); }

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), base);
}

}  // namespace pdiff
