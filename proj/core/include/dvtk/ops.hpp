#pragma once

#include <array>
#include <vector>

#include "dvtk/tensor.hpp"

DVTK_NAMESPACE_BEGIN

namespace ops {

// Elementwise arithmetic. Binary ops require identical shapes; the
// *_broadcast variants accept a right operand matching x's trailing dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_broadcast(const Tensor& x, const Tensor& y);
Tensor mul_broadcast(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, Scalar s);
Tensor affine(const Tensor& x, Scalar a, Scalar b);  // a*x + b
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Scalar slope);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
/// Values clamped to [lo, hi]; gradient passes only strictly inside.
Tensor clamp(const Tensor& x, Scalar lo, Scalar hi);
/// -p ln p - (1-p) ln(1-p), with p clamped away from {0,1} for stability.
Tensor binary_entropy(const Tensor& p);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums over every axis but the last: [..., C] -> [C].
Tensor sum_leading(const Tensor& x);

/// x[..., in] * w[in, out] + b[out]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor slice(const Tensor& x, int axis, int begin, int end);
Tensor concat(const std::vector<Tensor>& xs, int axis);

/// Non-overlapping mean over [kt, kh, kw] windows of x[B, T, H, W, C].
Tensor avg_pool3d(const Tensor& x, const std::array<int, 3>& kernel);
/// Nearest-neighbour upsampling of x[B, T, H, W, C] by integer factors.
Tensor upsample_nearest3d(const Tensor& x, const std::array<int, 3>& factor);

struct ConvGeometry {
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};  // zero padding on both sides
};

/// Channels-last 3D convolution. x[B, T, H, W, Cin], w[kt*kh*kw*Cin, Cout]
/// with the kernel flattened as (dt, dh, dw, cin), b[Cout] optional.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& geom);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = Scalar(1e-5));

/// Selective state-space scan with per-channel decay.
///   h_t[e, n] = exp(delta_t[e] * a[e]) * h_{t-1}[e, n] + delta_t[e] * u_t[e] * b_t[n]
///   y_t[e]    = sum_n c_t[n] * h_t[e, n]
/// u, delta: [S, L, E]; a: [E]; b, c: [S, L, N]. With `reverse` the
/// recurrence runs from the last position to the first.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      bool reverse);

/// Softmax attention over q, k, v [S, L, H, D]; output has the same shape.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal);

/// Forward value `values`, identity Jacobian with respect to `pre`.
Tensor straight_through(const Tensor& pre, Buffer values);

}  // namespace ops

DVTK_NAMESPACE_END
