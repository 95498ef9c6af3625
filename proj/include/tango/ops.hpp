#pragma once

// Differentiable operations on Graph nodes. Shapes are explicit: no
// broadcasting except the per-row / per-channel bias add inside linear and
// conv1d. Leading batch axes are supported where noted.

#include <string_view>
#include <vector>

#include "tango/autodiff.hpp"

namespace tango::ad {

enum class Activation { kLinear, kRelu, kSigmoid, kSoftmax };

// Throws ConfigError for names other than relu|sigmoid|linear|softmax.
Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation act);

// [n x k] * [k x m] -> [n x m], or batched [B x n x k] * [B x k x m].
Var matmul(Graph& g, Var a, Var b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose(Graph& g, Var x);
Var reshape(Graph& g, Var x, Shape shape);
// Concatenates along the last axis; all leading extents must agree.
Var concat(Graph& g, Var a, Var b);

Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
// scale * x + shift, elementwise.
Var affine(Graph& g, Var x, double scale, double shift = 0.0);

Var sum(Graph& g, Var x);
Var mean(Graph& g, Var x);

Var relu(Graph& g, Var x);
Var sigmoid(Graph& g, Var x);
// x * sigmoid(x)
Var gate(Graph& g, Var x);
// Along the last axis, shifted by the row maximum.
Var softmax(Graph& g, Var x);
Var activate(Graph& g, Var x, Activation act);

// log(clamp(x, lo, hi)); the gradient is zero where the clamp is active.
Var log_clamped(Graph& g, Var x, double lo, double hi);
// sqrt(x + eps)
Var sqrt_eps(Graph& g, Var x, double eps);
// Picks x[b, index[b]] from a [B x C] tensor -> [B].
Var gather(Graph& g, Var x, const std::vector<std::size_t>& index);

// w [m x n], b [m]; x is [n] or [B x n].
Var linear(Graph& g, Var x, Var w, Var b);
Var dense(Graph& g, Var x, Var w, Var b, Activation act);

// Valid cross-correlation, stride 1. x is [C_in x L] or [B x C_in x L];
// kernels [C_out x C_in x K]; bias [C_out].
Var conv1d(Graph& g, Var x, Var kernels, Var bias);
// Non-overlapping max over the last axis; ties go to the first index.
Var maxpool1d(Graph& g, Var x, std::size_t window = 2, std::size_t stride = 2);

}  // namespace tango::ad
