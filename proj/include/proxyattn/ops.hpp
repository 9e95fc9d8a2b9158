#pragma once

#include <optional>
#include <vector>

#include "proxyattn/autograd.hpp"

namespace proxyattn {

// Differentiable primitives. Every model computation goes through this set so
// that gradient checking covers all of it.
//
// Broadcasting is deliberately narrow:
//  - matmul: leading batch dims of one operand may be a suffix of the other's.
//  - add/sub/mul: the right operand may equal the left shape, be a trailing
//    suffix of it, or hold a single element.

Var matmul(Var a, Var b);
Var softmax_last(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var sigmoid(Var x);
Var tanh(Var x);

// x[..., d_in] * W[d_in, d_out] (+ b[d_out]).
Var linear(Var x, Var w, std::optional<Var> b = std::nullopt);

inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Var x, Var gain, Var bias);

// Layout primitives.
Var reshape(Var x, Shape shape);
Var permute(Var x, const std::vector<std::size_t>& perm);
Var transpose_last(Var x);
// Rows [begin, end) along axis 0.
Var slice0(Var x, std::size_t begin, std::size_t end);

// Reductions.
Var sum(Var x);
Var mean(Var x);
// Euclidean norm over the last axis: [..., d] -> [...].
Var norm_last(Var x);

// Non-differentiable kernels shared with metric and test code.
namespace kernels {
// Batched C = A * B with leading-batch broadcast, returns the product.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_last(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
}  // namespace kernels

}  // namespace proxyattn
