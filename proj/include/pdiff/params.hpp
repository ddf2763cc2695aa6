#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pdiff/rng.hpp"
#include "pdiff/tensor.hpp"

namespace pdiff {

/// Named tensors with insertion-ordered iteration. Also used to carry
/// gradients keyed by parameter name.
class ParamSet {
 public:
  void add(std::string name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  Tensor& operator[](const std::string& name) { return get(name); }
  const Tensor& operator[](const std::string& name) const { return get(name); }

  std::size_t count() const { return entries_.size(); }
  std::size_t numel() const;
  bool empty() const { return entries_.empty(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> names() const;
  ParamSet zeros_like() const;
  bool all_finite() const;

  bool operator==(const ParamSet& other) const { return entries_ == other.entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Affine weight of shape [fan_in x fan_out], uniform in +-1/sqrt(fan_in).
Tensor init_affine_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor init_normal(Shape shape, double stddev, Rng& rng);

/// Adds "<prefix>.w" and "<prefix>.b" for an affine layer.
void add_affine(ParamSet& ps, const std::string& prefix, std::size_t fan_in, std::size_t fan_out, Rng& rng);
/// Adds "<prefix>.gamma" (ones) and "<prefix>.beta" (zeros).
void add_layer_norm(ParamSet& ps, const std::string& prefix, std::size_t width);

}  // namespace pdiff
