#pragma once

#include <string>

#include "pdiff/autodiff.hpp"

namespace pdiff {

/// Scaled dot-product attention. `q`, `k`, `v` hold `batch` sequences of
/// `seq_len` rows each, stacked as consecutive row blocks of width d; the
/// columns are split evenly across `heads`. With `causal` set, position t
/// attends only to positions <= t of its own sequence.
Var attention_core(Var q, Var k, Var v, std::size_t batch, std::size_t seq_len, std::size_t heads,
                   bool causal = true);

struct AttentionWeights {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Reads "<prefix>.{q,k,v,o}.{w,b}" from bound parameters.
AttentionWeights attention_weights(const BoundParams& p, const std::string& prefix);
void add_attention_params(ParamSet& ps, const std::string& prefix, std::size_t width, Rng& rng);

/// Multi-head causal self-attention: projections, attention_core, output projection.
Var causal_attention(Var x, const AttentionWeights& w, std::size_t batch, std::size_t seq_len,
                     std::size_t heads);

}  // namespace pdiff
