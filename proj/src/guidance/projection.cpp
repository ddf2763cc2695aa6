#include <spdlog/spdlog.h>

#include <stdexcept>

#include "pdiff/guidance.hpp"

namespace pdiff {

namespace {

constexpr double kMinNorm = 1e-12;

void project_range(const double* dt, const double* dm, double* out, std::size_t n) {
  double dd = 0.0, dn = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dd += dt[i] * dm[i];
    dn += dm[i] * dm[i];
  }
  if (std::sqrt(dn) < kMinNorm) {
    spdlog::warn("project: |g_dm| below {:g}; guidance gradient passed through", kMinNorm);
    for (std::size_t i = 0; i < n; ++i) out[i] = dt[i];
    return;
  }
  const double c = dd / dn;
  for (std::size_t i = 0; i < n; ++i) out[i] = dt[i] - c * dm[i];
}

}  // namespace

FlatGrad project(const FlatGrad& g_dt, const FlatGrad& g_dm) {
  if (g_dt.size() != g_dm.size()) throw std::invalid_argument("project: gradient sizes differ");
  FlatGrad out = g_dt;
  project_range(g_dt.values.data(), g_dm.values.data(), out.values.data(), g_dt.size());
  return out;
}

FlatGrad project_per_tensor(const FlatGrad& g_dt, const FlatGrad& g_dm) {
  if (g_dt.size() != g_dm.size()) throw std::invalid_argument("project: gradient sizes differ");
  FlatGrad out = g_dt;
  std::size_t off = 0;
  for (const auto& entry : g_dm.layout) {
    const std::size_t n = shape_numel(entry.second);
    project_range(g_dt.values.data() + off, g_dm.values.data() + off, out.values.data() + off, n);
    off += n;
  }
  return out;
}

std::string to_string(GradientVariant v) {
  switch (v) {
    case GradientVariant::Projected: return "projected";
    case GradientVariant::DmOnly: return "dm-only";
    case GradientVariant::DtOnly: return "dt-only";
    case GradientVariant::NaiveSum: return "naive-sum";
  }
  return "?";
}

GradientVariant parse_variant(const std::string& s) {
  for (auto v : {GradientVariant::Projected, GradientVariant::DmOnly, GradientVariant::DtOnly,
                 GradientVariant::NaiveSum})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown gradient variant '" + s + "'");
}

std::string to_string(Branch b) { return b == Branch::Conflict ? "conflict" : "aligned"; }

FlatGrad combine(const FlatGrad& g_dm, const FlatGrad& g_dt, double lambda, Branch* branch) {
  return combine(g_dm, g_dt, lambda, GradientVariant::Projected, false, branch);
}

FlatGrad combine(const FlatGrad& g_dm, const FlatGrad& g_dt, double lambda, GradientVariant variant, bool per_tensor,
                 Branch* branch) {
  if (lambda < 0.0) throw std::invalid_argument("combine: lambda must be non-negative");
  if (g_dm.size() != g_dt.size()) throw std::invalid_argument("combine: gradient sizes differ");
  const bool conflict = dot(g_dm, g_dt) < 0.0;
  if (branch) *branch = conflict ? Branch::Conflict : Branch::Aligned;
  switch (variant) {
    case GradientVariant::DmOnly: return g_dm;
    case GradientVariant::DtOnly: return g_dt;
    case GradientVariant::NaiveSum: break;
    case GradientVariant::Projected:
      if (conflict) {
        const FlatGrad p = per_tensor ? project_per_tensor(g_dt, g_dm) : project(g_dt, g_dm);
        FlatGrad out = g_dm;
        for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += lambda * p.values[i];
        return out;
      }
      break;
  }
  FlatGrad out = g_dm;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += lambda * g_dt.values[i];
  return out;
}

}  // namespace pdiff
