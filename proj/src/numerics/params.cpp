#include "pdiff/params.hpp"

#include <cmath>
#include <stdexcept>

namespace pdiff {

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

Tensor& ParamSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor::zeros_like(t));
  return out;
}

bool ParamSet::all_finite() const {
  for (const auto& [_, t] : entries_)
    if (!t.all_finite()) return false;
  return true;
}

Tensor init_affine_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor w(Shape{fan_in, fan_out});
  for (auto& v : w.values()) v = uniform(rng, -bound, bound);
  return w;
}

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = stddev * normal(rng);
  return t;
}

void add_affine(ParamSet& ps, const std::string& prefix, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  ps.add(prefix + ".w", init_affine_weight(fan_in, fan_out, rng));
  ps.add(prefix + ".b", Tensor(Shape{fan_out}));
}

void add_layer_norm(ParamSet& ps, const std::string& prefix, std::size_t width) {
  ps.add(prefix + ".gamma", Tensor(Shape{width}, 1.0));
  ps.add(prefix + ".beta", Tensor(Shape{width}));
}

}  // namespace pdiff
