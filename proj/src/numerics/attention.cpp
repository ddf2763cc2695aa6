#include "pdiff/attention.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>
#include <stdexcept>

#include "pdiff/ops.hpp"

namespace pdiff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using ConstBlock = Eigen::Map<const RowMat, 0, Strided>;
using MutBlock = Eigen::Map<RowMat, 0, Strided>;

struct Layout {
  std::size_t batch, seq_len, heads, width, head_dim;

  std::size_t offset(std::size_t b, std::size_t h) const { return b * seq_len * width + h * head_dim; }
  ConstBlock view(const Tensor& t, std::size_t b, std::size_t h) const {
    return ConstBlock(t.data() + offset(b, h), static_cast<Eigen::Index>(seq_len),
                      static_cast<Eigen::Index>(head_dim), Strided(static_cast<Eigen::Index>(width)));
  }
  MutBlock view(Tensor& t, std::size_t b, std::size_t h) const {
    return MutBlock(t.data() + offset(b, h), static_cast<Eigen::Index>(seq_len), static_cast<Eigen::Index>(head_dim),
                    Strided(static_cast<Eigen::Index>(width)));
  }
};

}  // namespace

Var attention_core(Var q, Var k, Var v, std::size_t batch, std::size_t seq_len, std::size_t heads, bool causal) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.shape() != kv.shape() || qv.shape() != vv.shape()) {
    throw std::invalid_argument("attention: q " + shape_str(qv.shape()) + ", k " + shape_str(kv.shape()) + ", v " +
                                shape_str(vv.shape()) + " differ");
  }
  const std::size_t width = qv.cols();
  if (seq_len == 0 || heads == 0 || qv.rows() != batch * seq_len || width % heads != 0) {
    throw std::invalid_argument("attention: shape " + shape_str(qv.shape()) + " incompatible with batch " +
                                std::to_string(batch) + ", seq_len " + std::to_string(seq_len) + ", heads " +
                                std::to_string(heads));
  }
  const Layout lay{batch, seq_len, heads, width, width / heads};
  const double scale = 1.0 / std::sqrt(static_cast<double>(lay.head_dim));
  const auto T = static_cast<Eigen::Index>(seq_len);

  Tensor out(qv.shape());
  // Attention probabilities, [batch][heads][T x T].
  auto probs = std::make_shared<std::vector<double>>(batch * heads * seq_len * seq_len);
  RowMat s(T, T);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      s.noalias() = lay.view(qv, b, h) * lay.view(kv, b, h).transpose();
      s *= scale;
      double* p = probs->data() + (b * heads + h) * seq_len * seq_len;
      for (Eigen::Index i = 0; i < T; ++i) {
        const Eigen::Index last = causal ? i : T - 1;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= last; ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j < T; ++j) {
          const double e = j <= last ? std::exp(s(i, j) - mx) : 0.0;
          p[i * T + j] = e;
          z += e;
        }
        for (Eigen::Index j = 0; j <= last; ++j) p[i * T + j] /= z;
      }
      Eigen::Map<const RowMat> pm(p, T, T);
      lay.view(out, b, h).noalias() = pm * lay.view(vv, b, h);
    }
  }

  const int qid = q.id, kid = k.id, vid = v.id;
  return q.graph->record(std::move(out), {q, k, v}, [qid, kid, vid, lay, scale, probs](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    const Tensor& qv = g.value(qid);
    const Tensor& kv = g.value(kid);
    const Tensor& vv = g.value(vid);
    const auto T = static_cast<Eigen::Index>(lay.seq_len);
    Tensor* gq = g.requires_grad(qid) ? &g.grad_buffer(qid) : nullptr;
    Tensor* gk = g.requires_grad(kid) ? &g.grad_buffer(kid) : nullptr;
    Tensor* gv = g.requires_grad(vid) ? &g.grad_buffer(vid) : nullptr;
    RowMat dp(T, T);
    for (std::size_t b = 0; b < lay.batch; ++b) {
      for (std::size_t h = 0; h < lay.heads; ++h) {
        Eigen::Map<const RowMat> pm(probs->data() + (b * lay.heads + h) * lay.seq_len * lay.seq_len, T, T);
        auto dout = lay.view(gy, b, h);
        if (gv) lay.view(*gv, b, h).noalias() += pm.transpose() * dout;
        if (!gq && !gk) continue;
        dp.noalias() = dout * lay.view(vv, b, h).transpose();
        // Softmax Jacobian, row-wise: dS = P * (dP - sum(dP * P)).
        for (Eigen::Index i = 0; i < T; ++i) {
          const double s = (dp.row(i).array() * pm.row(i).array()).sum();
          dp.row(i) = (pm.row(i).array() * (dp.row(i).array() - s)).matrix();
        }
        dp *= scale;
        if (gq) lay.view(*gq, b, h).noalias() += dp * lay.view(kv, b, h);
        if (gk) lay.view(*gk, b, h).noalias() += dp.transpose() * lay.view(qv, b, h);
      }
    }
  });
}

AttentionWeights attention_weights(const BoundParams& p, const std::string& prefix) {
  return AttentionWeights{p[prefix + ".q.w"], p[prefix + ".q.b"], p[prefix + ".k.w"], p[prefix + ".k.b"],
                          p[prefix + ".v.w"], p[prefix + ".v.b"], p[prefix + ".o.w"], p[prefix + ".o.b"]};
}

void add_attention_params(ParamSet& ps, const std::string& prefix, std::size_t width, Rng& rng) {
  for (const char* part : {".q", ".k", ".v", ".o"}) add_affine(ps, prefix + part, width, width, rng);
}

Var causal_attention(Var x, const AttentionWeights& w, std::size_t batch, std::size_t seq_len, std::size_t heads) {
  Var q = affine(x, w.wq, w.bq);
  Var k = affine(x, w.wk, w.bk);
  Var v = affine(x, w.wv, w.bv);
  Var o = attention_core(q, k, v, batch, seq_len, heads, true);
  return affine(o, w.wo, w.bo);
}

}  // namespace pdiff
