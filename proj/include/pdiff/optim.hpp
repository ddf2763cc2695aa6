#pragma once

#include <cstdint>

#include "pdiff/params.hpp"

namespace pdiff {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Moment estimates mirror the parameter set they were created for.
struct AdamWState {
  AdamWConfig config;
  ParamSet first_moment;
  ParamSet second_moment;
  std::uint64_t step = 0;

  static AdamWState for_params(const ParamSet& params, AdamWConfig config = {});
};

/// Decoupled weight decay Adam with bias correction. Parameters whose name is
/// absent from `grads` are left untouched.
void adamw_step(ParamSet& params, const ParamSet& grads, AdamWState& state);

double global_norm(const ParamSet& grads);
/// Rescales every gradient by max_norm / n when the global L2 norm n exceeds
/// max_norm. Returns the pre-clip norm.
double clip_global_norm(ParamSet& grads, double max_norm);

}  // namespace pdiff
