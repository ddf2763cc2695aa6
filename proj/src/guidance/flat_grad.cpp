#include <cmath>
#include <stdexcept>

#include "pdiff/guidance.hpp"

namespace pdiff {

FlatGrad FlatGrad::flatten(const ParamSet& grads) {
  FlatGrad f;
  f.values.reserve(grads.numel());
  for (const auto& [name, t] : grads) {
    f.layout.emplace_back(name, t.shape());
    f.values.insert(f.values.end(), t.values().begin(), t.values().end());
  }
  return f;
}

ParamSet FlatGrad::scatter() const {
  ParamSet ps;
  std::size_t off = 0;
  for (const auto& [name, shape] : layout) {
    const std::size_t n = shape_numel(shape);
    if (off + n > values.size()) throw std::logic_error("FlatGrad: layout exceeds values");
    ps.add(name, Tensor(shape, std::vector<double>(values.begin() + off, values.begin() + off + n)));
    off += n;
  }
  if (off != values.size()) throw std::logic_error("FlatGrad: values exceed layout");
  return ps;
}

FlatGrad FlatGrad::with_values(std::vector<double> v) const {
  if (v.size() != values.size()) throw std::invalid_argument("FlatGrad: value count changed");
  return FlatGrad{std::move(v), layout};
}

double dot(const FlatGrad& a, const FlatGrad& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("FlatGrad dot: sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

double norm(const FlatGrad& g) { return std::sqrt(dot(g, g)); }

double cosine(const FlatGrad& a, const FlatGrad& b) {
  const double d = norm(a) * norm(b);
  return d > 0.0 ? dot(a, b) / d : 0.0;
}

}  // namespace pdiff
