#pragma once

#include <cstdint>
#include <vector>

#include "byols/nn/graph.hpp"

namespace byols::nn {

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var x);
Var gelu(Var x);  // exact erf form
Var sigmoid(Var x);
Var tanh(Var x);

// Shape.
Var reshape(Var x, Shape shape);
Var permute(Var x, const std::vector<int>& perm);
Var slice(Var x, int axis, Index start, Index length);
Var concat(const std::vector<Var>& xs, int axis);
Var stack(const std::vector<Var>& xs, int axis);

/// x[..., in] * W^T + b with W [out, in]; bias may be a null Var.
Var linear(Var x, Var weight, Var bias);
/// [B, m, k] x [B, k, n] -> [B, m, n]; transpose_b treats b as [B, n, k].
Var batched_matmul(Var a, Var b, bool transpose_b = false);

struct Conv2dOptions {
  Index stride_h = 1, stride_w = 1;
  Index pad_h = 0, pad_w = 0;
  Index groups = 1;
};
/// x [N, C, H, W], weight [Co, C / groups, kh, kw], bias [Co] or null.
Var conv2d(Var x, Var weight, Var bias, const Conv2dOptions& opt);

struct PoolOptions {
  Index kernel_h = 2, kernel_w = 2;
  Index stride_h = 2, stride_w = 2;
  Index pad_h = 0, pad_w = 0;
};
Var max_pool2d(Var x, const PoolOptions& opt);

/// Normalises over every axis except 1. Running statistics are updated in training mode.
Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, bool training,
               double momentum = 0.1, double eps = 1e-5);
/// Normalises over the last axis.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax(Var x);  // last axis

/// Inverted dropout with a mask drawn from `seed`; identity when p == 0.
Var dropout(Var x, double p, std::uint64_t seed);

// Reductions.
Var mean_axis(Var x, int axis);
Var max_axis(Var x, int axis);
Var sum_all(Var x);
Var mean_all(Var x);

/// Rows of [N, D] scaled to unit L2 norm.
Var l2_normalize_rows(Var x, double eps = 1e-12);

// Losses (scalar outputs).
Var mse(Var a, Var b);
/// Mean softmax cross-entropy; logits [N, C].
Var cross_entropy(Var logits, const std::vector<int>& labels);
/// Mean binary cross-entropy with logits over every element; targets in [0, 1].
Var bce_with_logits(Var logits, const Tensor& targets);

}  // namespace byols::nn
