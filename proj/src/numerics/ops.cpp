#include "pdiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pdiff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MutMap as_matrix(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw std::invalid_argument("operands belong to different graphs");
}

void accumulate(Graph& g, int id, const Tensor& delta) {
  if (!g.requires_grad(id)) return;
  Tensor& buf = g.grad_buffer(id);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += delta[i];
}

template <typename Fn, typename Deriv>
Var unary(Var x, Fn f, Deriv df) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  const int xid = x.id;
  return x.graph->record(std::move(y), {x}, [xid, df](Graph& g, int self) {
    const Tensor& xv = g.value(xid);
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i]);
  });
}

}  // namespace

double softplus(double x) {
  if (x > 20.0) return x;
  if (x < -20.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double mish_value(double x) { return x * std::tanh(softplus(x)); }

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()) +
                                " do not conform");
  }
  Tensor y(Shape{av.rows(), bv.cols()});
  as_matrix(y).noalias() = as_matrix(av) * as_matrix(bv);
  const int aid = a.id, bid = b.id;
  return a.graph->record(std::move(y), {a, b}, [aid, bid](Graph& g, int self) {
    auto gy = as_matrix(g.grad_ref(self));
    if (g.requires_grad(aid)) as_matrix(g.grad_buffer(aid)).noalias() += gy * as_matrix(g.value(bid)).transpose();
    if (g.requires_grad(bid)) as_matrix(g.grad_buffer(bid)).noalias() += as_matrix(g.value(aid)).transpose() * gy;
  });
}

Var affine(Var x, Var w, Var b) {
  require_same_graph(x, w);
  require_same_graph(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || xv.cols() != wv.rows() || bv.size() != wv.cols()) {
    throw std::invalid_argument("affine: x " + shape_str(xv.shape()) + " and W " + shape_str(wv.shape()) +
                                " with b " + shape_str(bv.shape()) + " do not conform");
  }
  Tensor y(Shape{xv.rows(), wv.cols()});
  auto ym = as_matrix(y);
  ym.noalias() = as_matrix(xv) * as_matrix(wv);
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), static_cast<Eigen::Index>(bv.size()));
  const int xid = x.id, wid = w.id, bid = b.id;
  return x.graph->record(std::move(y), {x, w, b}, [xid, wid, bid](Graph& g, int self) {
    auto gy = as_matrix(g.grad_ref(self));
    if (g.requires_grad(xid)) as_matrix(g.grad_buffer(xid)).noalias() += gy * as_matrix(g.value(wid)).transpose();
    if (g.requires_grad(wid)) as_matrix(g.grad_buffer(wid)).noalias() += as_matrix(g.value(xid)).transpose() * gy;
    if (g.requires_grad(bid)) {
      Tensor& gb = g.grad_buffer(bid);
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(gb.size())) += gy.colwise().sum();
    }
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("add", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const int aid = a.id, bid = b.id;
  return a.graph->record(std::move(y), {a, b}, [aid, bid](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    accumulate(g, aid, gy);
    accumulate(g, bid, gy);
  });
}

Var sub(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("sub", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const int aid = a.id, bid = b.id;
  return a.graph->record(std::move(y), {a, b}, [aid, bid](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    accumulate(g, aid, gy);
    if (g.requires_grad(bid)) {
      Tensor& gb = g.grad_buffer(bid);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape("mul", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const int aid = a.id, bid = b.id;
  return a.graph->record(std::move(y), {a, b}, [aid, bid](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.requires_grad(aid)) {
      const Tensor& bv = g.value(bid);
      Tensor& ga = g.grad_buffer(aid);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(bid)) {
      const Tensor& av = g.value(aid);
      Tensor& gb = g.grad_buffer(bid);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor y = a.value();
  for (auto& v : y.values()) v *= s;
  const int aid = a.id;
  return a.graph->record(std::move(y), {a}, [aid, s](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& ga = g.grad_buffer(aid);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * gy[i];
  });
}

Var add_scalar(Var a, double s) {
  Tensor y = a.value();
  for (auto& v : y.values()) v += s;
  const int aid = a.id;
  return a.graph->record(std::move(y), {a}, [aid](Graph& g, int self) { accumulate(g, aid, g.grad_ref(self)); });
}

Var add_bias(Var x, Var bias) {
  require_same_graph(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols()) {
    throw std::invalid_argument("add_bias: x " + shape_str(xv.shape()) + " and bias " + shape_str(bv.shape()) +
                                " do not conform");
  }
  Tensor y = xv;
  const std::size_t c = xv.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i % c];
  const int xid = x.id, bid = bias.id;
  return x.graph->record(std::move(y), {x, bias}, [xid, bid, c](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    accumulate(g, xid, gy);
    if (g.requires_grad(bid)) {
      Tensor& gb = g.grad_buffer(bid);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % c] += gy[i];
    }
  });
}

Var mish(Var x) {
  return unary(x, mish_value, [](double v) {
    const double sp = softplus(v);
    const double t = std::tanh(sp);
    const double sig = 1.0 / (1.0 + std::exp(-v));
    return t + v * (1.0 - t * t) * sig;
  });
}

Var gelu(Var x) {
  return unary(x, gelu_value, [](double v) {
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Var clamp(Var x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var dropout(Var x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  const Tensor& xv = x.value();
  Tensor mask(xv.shape());
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask.values()) m = uniform(rng) < p ? 0.0 : keep;
  Var m = x.graph->constant(std::move(mask));
  return mul(x, m);
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_graph(x, gamma);
  require_same_graph(x, beta);
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw std::invalid_argument("layer_norm: x " + shape_str(xv.shape()) + " and gamma " +
                                shape_str(gamma.shape()) + " do not conform");
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor y(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mu) * inv_std[r];
      y[r * d + c] = gv[c] * xhat[r * d + c] + bv[c];
    }
  }
  const int xid = x.id, gid = gamma.id, bid = beta.id;
  return x.graph->record(
      std::move(y), {x, gamma, beta},
      [xid, gid, bid, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, int self) {
        const Tensor& gy = g.grad_ref(self);
        const Tensor& gv = g.value(gid);
        if (g.requires_grad(gid)) {
          Tensor& gg = g.grad_buffer(gid);
          for (std::size_t i = 0; i < gy.size(); ++i) gg[i % d] += gy[i] * xhat[i];
        }
        if (g.requires_grad(bid)) {
          Tensor& gb = g.grad_buffer(bid);
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i % d] += gy[i];
        }
        if (g.requires_grad(xid)) {
          Tensor& gx = g.grad_buffer(xid);
          std::vector<double> dxhat(d);
          for (std::size_t r = 0; r < n; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dxhat[c] = gy[r * d + c] * gv[c];
              m1 += dxhat[c];
              m2 += dxhat[c] * xhat[r * d + c];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
              gx[r * d + c] += inv_std[r] * (dxhat[c] - m1 - xhat[r * d + c] * m2);
            }
          }
        }
      });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * d;
    double mx = row[0];
    for (std::size_t c = 1; c < d; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += (y[r * d + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] /= s;
  }
  const int xid = x.id;
  return x.graph->record(std::move(y), {x}, [xid, n, d](Graph& g, int self) {
    const Tensor& yv = g.value(self);
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(xid);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += gy[r * d + c] * yv[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += yv[r * d + c] * (gy[r * d + c] - s);
    }
  });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  const std::size_t d = tv.cols(), vocab = tv.rows();
  Tensor y(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table " + shape_str(tv.shape()));
    }
    std::copy_n(tv.data() + ids[i] * d, d, y.data() + i * d);
  }
  const int tid = table.id;
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return table.graph->record(std::move(y), {table}, [tid, d, idv = std::move(idv)](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gt = g.grad_buffer(tid);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) gt[idv[i] * d + c] += gy[i * d + c];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const int xid = x.id;
  return x.graph->record(Tensor::scalar(s), {x}, [xid](Graph& g, int self) {
    const double gy = g.grad_ref(self)[0];
    Tensor& gx = g.grad_buffer(xid);
    for (auto& v : gx.values()) v += gy;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var mse(Var pred, Var target) {
  require_same_graph(pred, target);
  require_same_shape("mse", pred, target);
  const Tensor& pv = pred.value();
  const Tensor& tv = target.value();
  const double n = static_cast<double>(pv.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) s += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  const int pid = pred.id, tid = target.id;
  return pred.graph->record(Tensor::scalar(s / n), {pred, target}, [pid, tid, n](Graph& g, int self) {
    const double gy = g.grad_ref(self)[0];
    const Tensor& pv = g.value(pid);
    const Tensor& tv = g.value(tid);
    if (g.requires_grad(pid)) {
      Tensor& gp = g.grad_buffer(pid);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += 2.0 * gy * (pv[i] - tv[i]) / n;
    }
    if (g.requires_grad(tid)) {
      Tensor& gt = g.grad_buffer(tid);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= 2.0 * gy * (pv[i] - tv[i]) / n;
    }
  });
}

Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor y(Shape{1, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) y[c] += xv[r * d + c];
  for (auto& v : y.values()) v /= static_cast<double>(n);
  const int xid = x.id;
  return x.graph->record(std::move(y), {x}, [xid, n, d](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(xid);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += gy[c] / static_cast<double>(n);
  });
}

Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  const int xid = x.id;
  return x.graph->record(std::move(y), {x}, [xid](Graph& g, int self) { accumulate(g, xid, g.grad_ref(self)); });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p);
    if (p.rows() != n) {
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    }
    total += p.cols();
  }
  Tensor y(Shape{n, total});
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    const std::size_t w = pv.cols();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(pv.data() + r * w, w, y.data() + r * total + off);
    off += w;
    ids.push_back(p.id);
    widths.push_back(w);
  }
  return parts[0].graph->record(std::move(y), parts, [ids, widths, n, total](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (g.requires_grad(ids[k])) {
        Tensor& gp = g.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += gy[r * total + off + c];
      }
      off += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  const std::size_t d = parts[0].cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p);
    if (p.cols() != d) {
      throw std::invalid_argument("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> vals;
  vals.reserve(total * d);
  std::vector<int> ids;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    const auto& pv = p.value().storage();
    vals.insert(vals.end(), pv.begin(), pv.end());
    ids.push_back(p.id);
    sizes.push_back(pv.size());
  }
  return parts[0].graph->record(Tensor(Shape{total, d}, std::move(vals)), parts, [ids, sizes](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.requires_grad(ids[k])) {
        Tensor& gp = g.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += gy[off + i];
      }
      off += sizes[k];
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (begin + count > d) {
    throw std::out_of_range("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                            ") outside " + shape_str(xv.shape()));
  }
  Tensor y(Shape{n, count});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(xv.data() + r * d + begin, count, y.data() + r * count);
  const int xid = x.id;
  return x.graph->record(std::move(y), {x}, [xid, n, d, begin, count](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(xid);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < count; ++c) gx[r * d + begin + c] += gy[r * count + c];
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (begin + count > n) {
    throw std::out_of_range("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                            ") outside " + shape_str(xv.shape()));
  }
  Tensor y(Shape{count, d}, std::vector<double>(xv.data() + begin * d, xv.data() + (begin + count) * d));
  const int xid = x.id;
  return x.graph->record(std::move(y), {x}, [xid, d, begin, count](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < count * d; ++i) gx[begin * d + i] += gy[i];
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor y(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_str(xv.shape()));
    std::copy_n(xv.data() + rows[i] * d, d, y.data() + i * d);
  }
  const int xid = x.id;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.graph->record(std::move(y), {x}, [xid, d, idx = std::move(idx)](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) gx[idx[i] * d + c] += gy[i * d + c];
  });
}

Var repeat_rows(Var x, std::size_t n) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.size();
  Tensor y(Shape{n, d});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(xv.data(), d, y.data() + r * d);
  const int xid = x.id;
  return x.graph->record(std::move(y), {x}, [xid, n, d](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(xid);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) gx[c] += gy[r * d + c];
  });
}

}  // namespace pdiff
