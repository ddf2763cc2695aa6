#include <stdexcept>

#include "pdiff/attention.hpp"
#include "pdiff/ops.hpp"
#include "pdiff/prompt_dt.hpp"

namespace pdiff {

namespace {

std::string block(std::size_t l) { return "h" + std::to_string(l); }

Tensor column_tensor(std::span<const Trajectory> trajs, std::size_t width,
                     const std::function<void(const Trajectory&, std::size_t, double*)>& fill) {
  std::size_t rows = 0;
  for (const auto& t : trajs) rows += t.length();
  Tensor out(Shape{rows, width});
  std::size_t r = 0;
  for (const auto& t : trajs)
    for (std::size_t k = 0; k < t.length(); ++k, ++r) fill(t, k, out.data() + r * width);
  return out;
}

Tensor rtg_column(std::span<const Trajectory> trajs) {
  return column_tensor(trajs, 1, [](const Trajectory& t, std::size_t k, double* o) { o[0] = t.rtg[k]; });
}
Tensor state_rows(std::span<const Trajectory> trajs) {
  return column_tensor(trajs, kStateDim, [](const Trajectory& t, std::size_t k, double* o) {
    o[0] = t.states[k][0];
    o[1] = t.states[k][1];
  });
}
Tensor action_rows(std::span<const Trajectory> trajs) {
  return column_tensor(trajs, kActionDim, [](const Trajectory& t, std::size_t k, double* o) {
    o[0] = t.actions[k][0];
    o[1] = t.actions[k][1];
  });
}

Var embed(const BoundParams& p, const std::string& name, Var x, Var time) {
  return add(affine(x, p[name + ".w"], p[name + ".b"]), time);
}

}  // namespace

ParamSet init_plm(const PLMConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.width;
  ParamSet ps;
  for (const char* pre : {"embed", "prompt"}) {
    const std::string s(pre);
    add_affine(ps, s + ".rtg", 1, d, rng);
    add_affine(ps, s + ".state", kStateDim, d, rng);
    add_affine(ps, s + ".action", kActionDim, d, rng);
    ps.add(s + ".time", init_normal(Shape{cfg.max_timestep, d}, 0.02, rng));
  }
  add_layer_norm(ps, "ln_embed", d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    add_layer_norm(ps, block(l) + ".ln1", d);
    add_attention_params(ps, block(l) + ".attn", d, rng);
    add_layer_norm(ps, block(l) + ".ln2", d);
    add_affine(ps, block(l) + ".mlp.fc", d, 4 * d, rng);
    add_affine(ps, block(l) + ".mlp.proj", 4 * d, d, rng);
  }
  add_layer_norm(ps, "ln_f", d);
  add_affine(ps, "head", d, kActionDim, rng);
  return ps;
}

PromptBlock prompt_constants(Graph& g, std::span<const Trajectory> prompts) {
  if (prompts.empty()) throw std::invalid_argument("prompt_constants: no prompts");
  PromptBlock pb;
  pb.steps = prompts[0].length();
  for (const auto& t : prompts) {
    if (t.length() != pb.steps) throw std::invalid_argument("prompt_constants: prompts differ in length");
    pb.timesteps.insert(pb.timesteps.end(), t.timesteps.begin(), t.timesteps.end());
  }
  pb.rtg = g.constant(rtg_column(prompts));
  pb.states = g.constant(state_rows(prompts));
  pb.actions = g.constant(action_rows(prompts));
  return pb;
}

Var plm_forward(const BoundParams& p, const PLMConfig& cfg, const PromptBlock* prompt,
                std::span<const Trajectory> histories, bool train, Rng* rng) {
  if (histories.empty()) throw std::invalid_argument("plm_forward: empty history batch");
  if (train && cfg.dropout > 0.0 && !rng) throw std::invalid_argument("plm_forward: training mode needs an rng");
  const std::size_t B = histories.size();
  const std::size_t K = histories[0].length();
  for (const auto& h : histories) {
    if (h.length() != K) throw std::invalid_argument("plm_forward: histories differ in length");
    for (std::size_t t : h.timesteps)
      if (t >= cfg.max_timestep) throw std::out_of_range("plm_forward: timestep " + std::to_string(t) + " too large");
  }
  const std::size_t P = prompt ? prompt->steps : 0;
  const std::size_t T = 3 * (P + K);
  if (K == 0) throw std::invalid_argument("plm_forward: empty history");
  if (T > cfg.max_tokens()) {
    throw std::invalid_argument("plm_forward: sequence of " + std::to_string(T) + " tokens exceeds maximum " +
                                std::to_string(cfg.max_tokens()));
  }
  Graph& g = p.graph();

  std::vector<std::size_t> times;
  times.reserve(B * K);
  for (const auto& h : histories) times.insert(times.end(), h.timesteps.begin(), h.timesteps.end());
  Var htime = embedding(p["embed.time"], times);
  std::vector<Var> parts{embed(p, "embed.rtg", g.constant(rtg_column(histories)), htime),
                         embed(p, "embed.state", g.constant(state_rows(histories)), htime),
                         embed(p, "embed.action", g.constant(action_rows(histories)), htime)};

  std::size_t prompt_rows = 0;
  bool shared_prompt = false;
  if (P > 0) {
    prompt_rows = prompt->rtg.rows();
    shared_prompt = prompt_rows == P;
    if (!shared_prompt && prompt_rows != B * P) {
      throw std::invalid_argument("plm_forward: prompt rows " + std::to_string(prompt_rows) + " fit neither " +
                                  std::to_string(P) + " nor batch x " + std::to_string(P));
    }
    for (std::size_t t : prompt->timesteps)
      if (t >= cfg.max_timestep) throw std::out_of_range("plm_forward: prompt timestep too large");
    Var ptime = embedding(p["prompt.time"], prompt->timesteps);
    parts.insert(parts.begin(), {embed(p, "prompt.rtg", prompt->rtg, ptime), embed(p, "prompt.state", prompt->states, ptime),
                                 embed(p, "prompt.action", prompt->actions, ptime)});
  }
  Var stacked = concat_rows(parts);

  // Interleave into per-sequence (rtg, state, action) order.
  const std::size_t hbase = 3 * prompt_rows;
  std::vector<std::size_t> order;
  order.reserve(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < P; ++j) {
      const std::size_t row = shared_prompt ? j : b * P + j;
      for (std::size_t m = 0; m < 3; ++m) order.push_back(m * prompt_rows + row);
    }
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t m = 0; m < 3; ++m) order.push_back(hbase + m * B * K + b * K + k);
  }
  Var x = layer_norm(gather_rows(stacked, order), p["ln_embed.gamma"], p["ln_embed.beta"]);
  const double drop = train ? cfg.dropout : 0.0;
  if (drop > 0.0) x = dropout(x, drop, *rng);

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = block(l);
    Var h = layer_norm(x, p[b + ".ln1.gamma"], p[b + ".ln1.beta"]);
    h = causal_attention(h, attention_weights(p, b + ".attn"), B, T, cfg.heads);
    if (drop > 0.0) h = dropout(h, drop, *rng);
    x = add(x, h);
    h = layer_norm(x, p[b + ".ln2.gamma"], p[b + ".ln2.beta"]);
    h = gelu(affine(h, p[b + ".mlp.fc.w"], p[b + ".mlp.fc.b"]));
    h = affine(h, p[b + ".mlp.proj.w"], p[b + ".mlp.proj.b"]);
    if (drop > 0.0) h = dropout(h, drop, *rng);
    x = add(x, h);
  }
  x = layer_norm(x, p["ln_f.gamma"], p["ln_f.beta"]);

  std::vector<std::size_t> state_rows_idx;
  state_rows_idx.reserve(B * (P + K));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < P + K; ++j) state_rows_idx.push_back(b * T + 3 * j + 1);
  return tanh(affine(gather_rows(x, state_rows_idx), p["head.w"], p["head.b"]));
}

Tensor plm_forward(const ParamSet& params, const PLMConfig& cfg, const TokenSequence& tokens) {
  Graph g;
  BoundParams p(g, params, false);
  auto part = [&](std::size_t begin, std::size_t n) {
    Trajectory t;
    t.rtg.assign(tokens.rtg.begin() + begin, tokens.rtg.begin() + begin + n);
    t.states.assign(tokens.states.begin() + begin, tokens.states.begin() + begin + n);
    t.actions.assign(tokens.actions.begin() + begin, tokens.actions.begin() + begin + n);
    t.timesteps.assign(tokens.timesteps.begin() + begin, tokens.timesteps.begin() + begin + n);
    t.rewards.assign(n, 0.0);
    return t;
  };
  const Trajectory prompt = part(0, tokens.prompt_steps);
  const Trajectory history = part(tokens.prompt_steps, tokens.history_steps);
  std::optional<PromptBlock> pb;
  if (tokens.prompt_steps > 0) pb = prompt_constants(g, std::span<const Trajectory>(&prompt, 1));
  return plm_forward(p, cfg, pb ? &*pb : nullptr, std::span<const Trajectory>(&history, 1)).value();
}

Var history_predictions(Var predictions, std::size_t batch, std::size_t prompt_steps, std::size_t history_steps) {
  std::vector<std::size_t> rows;
  rows.reserve(batch * history_steps);
  const std::size_t per = prompt_steps + history_steps;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < history_steps; ++k) rows.push_back(b * per + prompt_steps + k);
  return gather_rows(predictions, rows);
}

Tensor history_action_targets(std::span<const Trajectory> histories) { return action_rows(histories); }

Var loss_dt(const BoundParams& p, const PLMConfig& cfg, const PromptBlock* prompt,
            std::span<const Trajectory> histories, bool train, Rng* rng) {
  if (histories.empty()) throw std::invalid_argument("loss_dt: empty batch");
  Var pred = plm_forward(p, cfg, prompt, histories, train, rng);
  Var hist = history_predictions(pred, histories.size(), prompt ? prompt->steps : 0, histories[0].length());
  return mse(hist, pred.graph->constant(history_action_targets(histories)));
}

double loss_dt_batch(const ParamSet& params, const PLMConfig& cfg, const Trajectory* prompt,
                     std::span<const Trajectory> histories) {
  Graph g;
  BoundParams p(g, params, false);
  std::optional<PromptBlock> pb;
  if (prompt && prompt->length() > 0) pb = prompt_constants(g, std::span<const Trajectory>(prompt, 1));
  return loss_dt(p, cfg, pb ? &*pb : nullptr, histories).value().item();
}

}  // namespace pdiff
