#pragma once

#include <span>
#include <vector>

#include "pdiff/autodiff.hpp"
#include "pdiff/rng.hpp"

namespace pdiff {

// Matrix products. Operands are viewed as matrices (see Tensor::rows/cols).
Var matmul(Var a, Var b);
/// y = x W + b, with x [n x d_in], W [d_in x d_out], b [d_out].
Var affine(Var x, Var w, Var b);

// Elementwise arithmetic on equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Adds a [cols] row vector to every row of x.
Var add_bias(Var x, Var bias);

// Activations.
Var mish(Var x);
Var gelu(Var x);
Var tanh(Var x);
/// Identity inside [lo, hi], constant outside; gradient is zero where clamped.
Var clamp(Var x, double lo, double hi);
/// Inverted dropout; identity when p == 0.
Var dropout(Var x, double p, Rng& rng);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var x);
/// Rows of `table` selected by `ids`, shape [ids.size() x table.cols()].
Var embedding(Var table, std::span<const std::size_t> ids);

// Reductions.
Var sum(Var x);
Var mean(Var x);
/// Mean of squared differences over all elements.
Var mse(Var pred, Var target);
/// [r x c] -> [1 x c] column means.
Var mean_rows(Var x);

// Layout.
Var reshape(Var x, Shape shape);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
/// out[i] = x[rows[i]]; repeated indices accumulate in the backward pass.
Var gather_rows(Var x, std::span<const std::size_t> rows);
/// [1 x c] -> [n x c].
Var repeat_rows(Var x, std::size_t n);

double softplus(double x);
double mish_value(double x);
double gelu_value(double x);

}  // namespace pdiff
