#include "dvtk/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

DVTK_NAMESPACE_BEGIN

namespace ops {

namespace {

using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using VecMap = Eigen::Map<Vec>;
using CVecMap = Eigen::Map<const Vec>;
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;
using StridedMap = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

Eigen::Index ssize(const Buffer& v) { return static_cast<Eigen::Index>(v.size()); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) fail(ErrorKind::kShape, std::string(op) + ": axis out of range");
  return a;
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, Fwd fwd, Bwd bwd) {
  Buffer out(x.values().size());
  const auto n = ssize(out);
  VecMap(out.data(), n) = fwd(CVecMap(x.values().data(), n));
  return Tensor::from_op(x.shape(), std::move(out), {x}, [bwd](detail::Node& self) {
    Scalar* gx = self.input_grad(0);
    if (!gx) return;
    const auto m = ssize(self.value);
    CVecMap xv(self.inputs[0]->value.data(), m);
    CVecMap yv(self.value.data(), m);
    CVecMap gv(self.grad.data(), m);
    VecMap(gx, m) += bwd(xv, yv, gv);
  });
}

// Copies src (shape in_shape) into dst laid out as the permuted tensor.
void permute_into(const Scalar* src, const Shape& in_shape, const std::vector<int>& perm, Scalar* dst,
                  bool accumulate) {
  const int r = static_cast<int>(in_shape.size());
  if (r == 0) {
    dst[0] = accumulate ? dst[0] + src[0] : src[0];
    return;
  }
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> src_stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  const std::int64_t inner = out_shape[r - 1];
  const std::int64_t inner_stride = src_stride[r - 1];
  const std::int64_t total = shape_numel(out_shape);
  if (total == 0) return;
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::int64_t src_off = 0;
  for (std::int64_t out_off = 0; out_off < total; out_off += inner) {
    Scalar* d = dst + out_off;
    const Scalar* s = src + src_off;
    if (inner_stride == 1) {
      if (accumulate) {
        for (std::int64_t j = 0; j < inner; ++j) d[j] += s[j];
      } else {
        std::copy(s, s + inner, d);
      }
    } else {
      if (accumulate) {
        for (std::int64_t j = 0; j < inner; ++j) d[j] += s[j * inner_stride];
      } else {
        for (std::int64_t j = 0; j < inner; ++j) d[j] = s[j * inner_stride];
      }
    }
    // Odometer over the outer axes.
    for (int a = r - 2; a >= 0; --a) {
      if (++idx[a] < out_shape[a]) {
        src_off += src_stride[a];
        break;
      }
      src_off -= src_stride[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
}

struct Conv3dDims {
  int B, T, H, W, Ci, To, Ho, Wo, Co;
  std::int64_t rows() const { return static_cast<std::int64_t>(B) * To * Ho * Wo; }
};

// im2col (forward) and col2im (accumulate) share the traversal.
template <bool kGather>
void conv_columns(const Conv3dDims& d, const ConvGeometry& g, Scalar* cols, Scalar* x) {
  const auto [kt, kh, kw] = g.kernel;
  const std::int64_t K = static_cast<std::int64_t>(kt) * kh * kw * d.Ci;
  std::int64_t row = 0;
  for (int b = 0; b < d.B; ++b)
    for (int to = 0; to < d.To; ++to)
      for (int ho = 0; ho < d.Ho; ++ho)
        for (int wo = 0; wo < d.Wo; ++wo, ++row) {
          Scalar* c = cols + row * K;
          for (int dt = 0; dt < kt; ++dt) {
            const int ti = to * g.stride[0] - g.padding[0] + dt;
            for (int dh = 0; dh < kh; ++dh) {
              const int hi = ho * g.stride[1] - g.padding[1] + dh;
              for (int dw = 0; dw < kw; ++dw, c += d.Ci) {
                const int wi = wo * g.stride[2] - g.padding[2] + dw;
                const bool inside = ti >= 0 && ti < d.T && hi >= 0 && hi < d.H && wi >= 0 && wi < d.W;
                if (!inside) {
                  if constexpr (kGather) std::fill(c, c + d.Ci, Scalar(0));
                  continue;
                }
                Scalar* px = x + ((((static_cast<std::int64_t>(b) * d.T + ti) * d.H + hi) * d.W + wi) * d.Ci);
                if constexpr (kGather) {
                  std::copy(px, px + d.Ci, c);
                } else {
                  for (int ci = 0; ci < d.Ci; ++ci) px[ci] += c[ci];
                }
              }
            }
          }
        }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.values().begin(), a.values().end());
  const auto n = ssize(out);
  VecMap(out.data(), n) += CVecMap(b.values().data(), n);
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto m = ssize(self.value);
    CVecMap g(self.grad.data(), m);
    if (Scalar* ga = self.input_grad(0)) VecMap(ga, m) += g;
    if (Scalar* gb = self.input_grad(1)) VecMap(gb, m) += g;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.values().begin(), a.values().end());
  const auto n = ssize(out);
  VecMap(out.data(), n) -= CVecMap(b.values().data(), n);
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto m = ssize(self.value);
    CVecMap g(self.grad.data(), m);
    if (Scalar* ga = self.input_grad(0)) VecMap(ga, m) += g;
    if (Scalar* gb = self.input_grad(1)) VecMap(gb, m) -= g;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.values().size());
  const auto n = ssize(out);
  VecMap(out.data(), n) = CVecMap(a.values().data(), n) * CVecMap(b.values().data(), n);
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto m = ssize(self.value);
    CVecMap g(self.grad.data(), m);
    if (Scalar* ga = self.input_grad(0)) VecMap(ga, m) += g * CVecMap(self.inputs[1]->value.data(), m);
    if (Scalar* gb = self.input_grad(1)) VecMap(gb, m) += g * CVecMap(self.inputs[0]->value.data(), m);
  });
}

namespace {

std::int64_t trailing_block(const Tensor& x, const Tensor& y, const char* op) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
    fail(ErrorKind::kShape, std::string(op) + ": " + shape_str(ys) + " does not match trailing dims of " + shape_str(xs));
  }
  return y.numel();
}

}  // namespace

Tensor add_broadcast(const Tensor& x, const Tensor& y) {
  const std::int64_t blk = trailing_block(x, y, "add_broadcast");
  const std::int64_t rows = blk ? x.numel() / blk : 0;
  Buffer out(x.values().begin(), x.values().end());
  MatMap(out.data(), rows, blk).rowwise() += CMatMap(y.values().data(), 1, blk).row(0);
  return Tensor::from_op(x.shape(), std::move(out), {x, y}, [rows, blk](detail::Node& self) {
    CMatMap g(self.grad.data(), rows, blk);
    if (Scalar* gx = self.input_grad(0)) MatMap(gx, rows, blk) += g;
    if (Scalar* gy = self.input_grad(1)) MatMap(gy, 1, blk) += g.colwise().sum();
  });
}

Tensor mul_broadcast(const Tensor& x, const Tensor& y) {
  const std::int64_t blk = trailing_block(x, y, "mul_broadcast");
  const std::int64_t rows = blk ? x.numel() / blk : 0;
  Buffer out(x.values().size());
  MatMap(out.data(), rows, blk) =
      CMatMap(x.values().data(), rows, blk).array().rowwise() * CVecMap(y.values().data(), blk).transpose();
  return Tensor::from_op(x.shape(), std::move(out), {x, y}, [rows, blk](detail::Node& self) {
    CMatMap g(self.grad.data(), rows, blk);
    CMatMap xv(self.inputs[0]->value.data(), rows, blk);
    CVecMap yv(self.inputs[1]->value.data(), blk);
    if (Scalar* gx = self.input_grad(0)) MatMap(gx, rows, blk).array() += g.array().rowwise() * yv.transpose();
    if (Scalar* gy = self.input_grad(1)) MatMap(gy, 1, blk) += (g.array() * xv.array()).colwise().sum().matrix();
  });
}

Tensor scale(const Tensor& x, Scalar s) { return affine(x, s, Scalar(0)); }

Tensor affine(const Tensor& x, Scalar a, Scalar b) {
  return unary(
      x, [a, b](const auto& v) { return v * a + b; },
      [a](const auto&, const auto&, const auto& g) { return g * a; });
}

Tensor neg(const Tensor& x) { return affine(x, Scalar(-1), Scalar(0)); }

Tensor exp(const Tensor& x) {
  return unary(
      x, [](const auto& v) { return v.exp(); }, [](const auto&, const auto& y, const auto& g) { return g * y; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](const auto& v) { return v.tanh(); },
      [](const auto&, const auto& y, const auto& g) { return g * (Scalar(1) - y.square()); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](const auto& v) { return v.logistic(); },
      [](const auto&, const auto& y, const auto& g) { return g * y * (Scalar(1) - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](const auto& v) { return v * v.logistic(); },
      [](const auto& xv, const auto&, const auto& g) {
        return g * xv.logistic() * (Scalar(1) + xv * (Scalar(1) - xv.logistic()));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](const auto& v) { return v.max(Scalar(0)) + (-v.abs()).exp().log1p(); },
      [](const auto& xv, const auto&, const auto& g) { return g * xv.logistic(); });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, Scalar(0)); }

Tensor leaky_relu(const Tensor& x, Scalar slope) {
  return unary(
      x, [slope](const auto& v) { return (v > Scalar(0)).select(v, v * slope); },
      [slope](const auto& xv, const auto&, const auto& g) { return (xv > Scalar(0)).select(g, g * slope); });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](const auto& v) { return v.abs(); },
      [](const auto& xv, const auto&, const auto& g) {
        return (xv > Scalar(0)).select(g, (xv < Scalar(0)).select(-g, Scalar(0) * g));
      });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](const auto& v) { return v.square(); },
      [](const auto& xv, const auto&, const auto& g) { return g * xv * Scalar(2); });
}

Tensor clamp(const Tensor& x, Scalar lo, Scalar hi) {
  return unary(
      x, [lo, hi](const auto& v) { return v.max(lo).min(hi); },
      [lo, hi](const auto& xv, const auto&, const auto& g) {
        return (xv > lo && xv < hi).select(g, Scalar(0) * g);
      });
}

namespace {
constexpr Scalar kEntropyEps = std::is_same_v<Scalar, float> ? Scalar(1e-6) : Scalar(1e-12);
}

Tensor binary_entropy(const Tensor& p) {
  return unary(
      p,
      [](const auto& v) {
        const auto q = v.max(kEntropyEps).min(Scalar(1) - kEntropyEps);
        return -(q * q.log() + (Scalar(1) - q) * (Scalar(1) - q).log());
      },
      [](const auto& v, const auto&, const auto& g) {
        const auto q = v.max(kEntropyEps).min(Scalar(1) - kEntropyEps);
        return g * ((Scalar(1) - q) / q).log();
      });
}

Tensor sum(const Tensor& x) {
  const Scalar s = CVecMap(x.values().data(), x.numel()).sum();
  return Tensor::from_op(Shape{}, {s}, {x}, [](detail::Node& self) {
    if (Scalar* gx = self.input_grad(0)) {
      const auto m = ssize(self.inputs[0]->value);
      VecMap(gx, m) += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  const auto n = x.numel();
  if (n == 0) fail(ErrorKind::kShape, "mean of empty tensor");
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(n));
}

Tensor sum_leading(const Tensor& x) {
  if (x.rank() == 0) fail(ErrorKind::kShape, "sum_leading on scalar");
  const std::int64_t c = x.dim(-1);
  const std::int64_t rows = c ? x.numel() / c : 0;
  Buffer out(static_cast<std::size_t>(c));
  MatMap(out.data(), 1, c) = CMatMap(x.values().data(), rows, c).colwise().sum();
  return Tensor::from_op(Shape{static_cast<int>(c)}, std::move(out), {x}, [rows, c](detail::Node& self) {
    if (Scalar* gx = self.input_grad(0)) {
      MatMap(gx, rows, c).rowwise() += CMatMap(self.grad.data(), 1, c).row(0);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0)) {
    fail(ErrorKind::kShape, "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  const std::int64_t in = w.dim(0), outc = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != outc)) fail(ErrorKind::kShape, "linear: bias shape mismatch");
  const std::int64_t rows = in ? x.numel() / in : 0;
  Shape out_shape = x.shape();
  out_shape.back() = static_cast<int>(outc);
  Buffer out(static_cast<std::size_t>(rows * outc));
  MatMap y(out.data(), rows, outc);
  y.noalias() = CMatMap(x.values().data(), rows, in) * CMatMap(w.values().data(), in, outc);
  if (b.defined()) y.rowwise() += CMatMap(b.values().data(), 1, outc).row(0);
  return Tensor::from_op(std::move(out_shape), std::move(out), {x, w, b}, [rows, in, outc](detail::Node& self) {
    CMatMap g(self.grad.data(), rows, outc);
    if (Scalar* gx = self.input_grad(0)) {
      MatMap(gx, rows, in).noalias() += g * CMatMap(self.inputs[1]->value.data(), in, outc).transpose();
    }
    if (Scalar* gw = self.input_grad(1)) {
      MatMap(gw, in, outc).noalias() += CMatMap(self.inputs[0]->value.data(), rows, in).transpose() * g;
    }
    if (self.inputs[2] && self.inputs[2]->requires_grad) {
      Scalar* gb = self.input_grad(2);
      MatMap(gb, 1, outc) += g.colwise().sum();
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail(ErrorKind::kShape, "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Buffer out(x.values().begin(), x.values().end());
  return Tensor::from_op(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    if (Scalar* gx = self.input_grad(0)) {
      const auto m = ssize(self.value);
      VecMap(gx, m) += CVecMap(self.grad.data(), m);
    }
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) fail(ErrorKind::kShape, "permute: rank mismatch");
  std::vector<int> inverse(static_cast<std::size_t>(r), -1);
  for (int i = 0; i < r; ++i) {
    if (perm[i] < 0 || perm[i] >= r || inverse[perm[i]] != -1) fail(ErrorKind::kShape, "permute: invalid permutation");
    inverse[perm[i]] = i;
  }
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  Buffer out(x.values().size());
  permute_into(x.values().data(), x.shape(), perm, out.data(), false);
  return Tensor::from_op(out_shape, std::move(out), {x}, [inverse, out_shape](detail::Node& self) {
    if (Scalar* gx = self.input_grad(0)) permute_into(self.grad.data(), out_shape, inverse, gx, true);
  });
}

Tensor slice(const Tensor& x, int axis, int begin, int end) {
  const int a = normalize_axis(axis, x.rank(), "slice");
  const int len = x.shape()[a];
  if (begin < 0 || end > len || begin > end) fail(ErrorKind::kShape, "slice: range out of bounds");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= x.shape()[i];
  for (int i = a + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::int64_t width = static_cast<std::int64_t>(end - begin) * inner;
  Shape out_shape = x.shape();
  out_shape[a] = end - begin;
  Buffer out(static_cast<std::size_t>(outer * width));
  const Scalar* src = x.values().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    const Scalar* s = src + o * len * inner + static_cast<std::int64_t>(begin) * inner;
    std::copy(s, s + width, out.data() + o * width);
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), {x},
                         [outer, width, len, inner, begin](detail::Node& self) {
                           Scalar* gx = self.input_grad(0);
                           if (!gx) return;
                           for (std::int64_t o = 0; o < outer; ++o) {
                             Scalar* d = gx + o * len * inner + static_cast<std::int64_t>(begin) * inner;
                             const Scalar* g = self.grad.data() + o * width;
                             for (std::int64_t j = 0; j < width; ++j) d[j] += g[j];
                           }
                         });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) fail(ErrorKind::kShape, "concat of nothing");
  const int a = normalize_axis(axis, xs[0].rank(), "concat");
  Shape out_shape = xs[0].shape();
  out_shape[a] = 0;
  for (const auto& t : xs) {
    Shape s = t.shape();
    if (static_cast<int>(s.size()) != xs[0].rank()) fail(ErrorKind::kShape, "concat: rank mismatch");
    out_shape[a] += s[a];
    s[a] = xs[0].shape()[a];
    if (s != xs[0].shape()) fail(ErrorKind::kShape, "concat: incompatible shapes");
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= out_shape[i];
  for (int i = a + 1; i < static_cast<int>(out_shape.size()); ++i) inner *= out_shape[i];
  const std::int64_t out_width = static_cast<std::int64_t>(out_shape[a]) * inner;
  std::vector<std::int64_t> widths, offsets;
  std::int64_t off = 0;
  for (const auto& t : xs) {
    widths.push_back(static_cast<std::int64_t>(t.shape()[a]) * inner);
    offsets.push_back(off);
    off += widths.back();
  }
  Buffer out(static_cast<std::size_t>(outer * out_width));
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Scalar* src = xs[k].values().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * widths[k], src + (o + 1) * widths[k], out.data() + o * out_width + offsets[k]);
    }
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), xs,
                         [outer, out_width, widths, offsets](detail::Node& self) {
                           for (std::size_t k = 0; k < widths.size(); ++k) {
                             Scalar* gx = self.input_grad(k);
                             if (!gx) continue;
                             for (std::int64_t o = 0; o < outer; ++o) {
                               const Scalar* g = self.grad.data() + o * out_width + offsets[k];
                               Scalar* d = gx + o * widths[k];
                               for (std::int64_t j = 0; j < widths[k]; ++j) d[j] += g[j];
                             }
                           }
                         });
}

Tensor avg_pool3d(const Tensor& x, const std::array<int, 3>& k) {
  if (x.rank() != 5) fail(ErrorKind::kShape, "avg_pool3d expects [B,T,H,W,C], got " + shape_str(x.shape()));
  const int B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  if (k[0] < 1 || k[1] < 1 || k[2] < 1 || T % k[0] || H % k[1] || W % k[2]) {
    fail(ErrorKind::kShape, "avg_pool3d: " + shape_str(x.shape()) + " not divisible by kernel " +
                                std::to_string(k[0]) + "x" + std::to_string(k[1]) + "x" + std::to_string(k[2]));
  }
  const int To = T / k[0], Ho = H / k[1], Wo = W / k[2];
  const int count = k[0] * k[1] * k[2];
  const Scalar inv = Scalar(1) / static_cast<Scalar>(count);
  // Double accumulation and a true division keep the mean of replicated
  // values exact, so pooling undoes nearest upsampling bit for bit.
  std::vector<double> acc(static_cast<std::size_t>(B) * To * Ho * Wo * C, 0.0);
  const Scalar* src = x.values().data();
  auto in_at = [=](int b, int t, int h, int w) {
    return ((((static_cast<std::int64_t>(b) * T + t) * H + h) * W + w) * C);
  };
  auto out_at = [=](int b, int t, int h, int w) {
    return ((((static_cast<std::int64_t>(b) * To + t) * Ho + h) * Wo + w) * C);
  };
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const Scalar* s = src + in_at(b, t, h, w);
          double* d = acc.data() + out_at(b, t / k[0], h / k[1], w / k[2]);
          for (int c = 0; c < C; ++c) d[c] += s[c];
        }
  Buffer out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<Scalar>(acc[i] / count);
  return Tensor::from_op(Shape{B, To, Ho, Wo, C}, std::move(out), {x}, [=](detail::Node& self) {
    Scalar* gx = self.input_grad(0);
    if (!gx) return;
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const Scalar* g = self.grad.data() + out_at(b, t / k[0], h / k[1], w / k[2]);
            Scalar* d = gx + in_at(b, t, h, w);
            for (int c = 0; c < C; ++c) d[c] += g[c] * inv;
          }
  });
}

Tensor upsample_nearest3d(const Tensor& x, const std::array<int, 3>& f) {
  if (x.rank() != 5) fail(ErrorKind::kShape, "upsample_nearest3d expects [B,T,H,W,C], got " + shape_str(x.shape()));
  if (f[0] < 1 || f[1] < 1 || f[2] < 1) fail(ErrorKind::kShape, "upsample_nearest3d: factors must be >= 1");
  const int B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  const int To = T * f[0], Ho = H * f[1], Wo = W * f[2];
  Buffer out(static_cast<std::size_t>(B) * To * Ho * Wo * C);
  const Scalar* src = x.values().data();
  auto in_at = [=](int b, int t, int h, int w) {
    return ((((static_cast<std::int64_t>(b) * T + t) * H + h) * W + w) * C);
  };
  std::int64_t o = 0;
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < To; ++t)
      for (int h = 0; h < Ho; ++h)
        for (int w = 0; w < Wo; ++w, o += C) {
          const Scalar* s = src + in_at(b, t / f[0], h / f[1], w / f[2]);
          std::copy(s, s + C, out.data() + o);
        }
  return Tensor::from_op(Shape{B, To, Ho, Wo, C}, std::move(out), {x}, [=](detail::Node& self) {
    Scalar* gx = self.input_grad(0);
    if (!gx) return;
    std::int64_t off = 0;
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < To; ++t)
        for (int h = 0; h < Ho; ++h)
          for (int w = 0; w < Wo; ++w, off += C) {
            Scalar* d = gx + in_at(b, t / f[0], h / f[1], w / f[2]);
            const Scalar* g = self.grad.data() + off;
            for (int c = 0; c < C; ++c) d[c] += g[c];
          }
  });
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& g) {
  if (x.rank() != 5) fail(ErrorKind::kShape, "conv3d expects [B,T,H,W,C], got " + shape_str(x.shape()));
  Conv3dDims d{};
  d.B = x.dim(0), d.T = x.dim(1), d.H = x.dim(2), d.W = x.dim(3), d.Ci = x.dim(4);
  const std::int64_t K = static_cast<std::int64_t>(g.kernel[0]) * g.kernel[1] * g.kernel[2] * d.Ci;
  if (w.rank() != 2 || w.dim(0) != K) {
    fail(ErrorKind::kShape, "conv3d: weight " + shape_str(w.shape()) + " does not match kernel volume " + std::to_string(K));
  }
  d.Co = w.dim(1);
  auto out_extent = [](int n, int k, int s, int p) { return n + 2 * p < k ? 0 : (n + 2 * p - k) / s + 1; };
  d.To = out_extent(d.T, g.kernel[0], g.stride[0], g.padding[0]);
  d.Ho = out_extent(d.H, g.kernel[1], g.stride[1], g.padding[1]);
  d.Wo = out_extent(d.W, g.kernel[2], g.stride[2], g.padding[2]);
  if (d.To < 1 || d.Ho < 1 || d.Wo < 1) fail(ErrorKind::kShape, "conv3d: input " + shape_str(x.shape()) + " smaller than kernel");
  const std::int64_t rows = d.rows();
  Buffer cols(static_cast<std::size_t>(rows * K));
  conv_columns<true>(d, g, cols.data(), const_cast<Scalar*>(x.values().data()));
  Buffer out(static_cast<std::size_t>(rows * d.Co));
  MatMap y(out.data(), rows, d.Co);
  y.noalias() = CMatMap(cols.data(), rows, K) * CMatMap(w.values().data(), K, d.Co);
  if (b.defined()) y.rowwise() += CMatMap(b.values().data(), 1, d.Co).row(0);
  return Tensor::from_op(Shape{d.B, d.To, d.Ho, d.Wo, d.Co}, std::move(out), {x, w, b},
                         [d, g, K, rows](detail::Node& self) {
                           CMatMap gy(self.grad.data(), rows, d.Co);
                           Scalar* gx = self.input_grad(0);
                           Scalar* gw = self.input_grad(1);
                           if (gw) {
                             Buffer cols(static_cast<std::size_t>(rows * K));
                             conv_columns<true>(d, g, cols.data(), self.inputs[0]->value.data());
                             MatMap(gw, K, d.Co).noalias() += CMatMap(cols.data(), rows, K).transpose() * gy;
                           }
                           if (gx) {
                             Buffer gcols(static_cast<std::size_t>(rows * K));
                             MatMap(gcols.data(), rows, K).noalias() =
                                 gy * CMatMap(self.inputs[1]->value.data(), K, d.Co).transpose();
                             conv_columns<false>(d, g, gcols.data(), gx);
                           }
                           if (self.inputs[2] && self.inputs[2]->requires_grad) {
                             MatMap(self.input_grad(2), 1, d.Co) += gy.colwise().sum();
                           }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  const std::int64_t c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) fail(ErrorKind::kShape, "layer_norm: affine parameter size mismatch");
  const std::int64_t rows = x.numel() / c;
  Buffer out(x.values().size());
  Buffer xhat(x.values().size());
  Buffer rstd(static_cast<std::size_t>(rows));
  CMatMap xv(x.values().data(), rows, c);
  CVecMap gv(gamma.values().data(), c), bv(beta.values().data(), c);
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto row = xv.row(r).array();
    const Scalar mu = row.mean();
    const Scalar var = (row - mu).square().mean();
    const Scalar rs = Scalar(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    Eigen::Map<Vec> xh(xhat.data() + r * c, c);
    xh = (row.transpose() - mu) * rs;
    Eigen::Map<Vec>(out.data() + r * c, c) = xh * gv + bv;
  }
  return Tensor::from_op(x.shape(), std::move(out), {x, gamma, beta},
                         [rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
                           CVecMap gv(self.inputs[1]->value.data(), c);
                           Scalar* gx = self.input_grad(0);
                           Scalar* gg = self.input_grad(1);
                           Scalar* gb = self.input_grad(2);
                           for (std::int64_t r = 0; r < rows; ++r) {
                             CVecMap gy(self.grad.data() + r * c, c);
                             CVecMap xh(xhat.data() + r * c, c);
                             if (gg) VecMap(gg, c) += gy * xh;
                             if (gb) VecMap(gb, c) += gy;
                             if (gx) {
                               const Vec gxh = gy * gv;
                               const Scalar m1 = gxh.mean();
                               const Scalar m2 = (gxh * xh).mean();
                               VecMap(gx + r * c, c) += (gxh - m1 - xh * m2) * rstd[r];
                             }
                           }
                         });
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      bool reverse) {
  if (u.rank() != 3 || delta.shape() != u.shape() || b.rank() != 3 || c.shape() != b.shape() ||
      b.dim(0) != u.dim(0) || b.dim(1) != u.dim(1) || a.rank() != 1 || a.dim(0) != u.dim(2)) {
    fail(ErrorKind::kShape, "selective_scan: inconsistent shapes u" + shape_str(u.shape()) + " b" + shape_str(b.shape()) +
                                " a" + shape_str(a.shape()));
  }
  const int S = u.dim(0), L = u.dim(1), E = u.dim(2), N = b.dim(2);
  Buffer y(u.values().size());
  Buffer h(static_cast<std::size_t>(E) * N);
  const Scalar* U = u.values().data();
  const Scalar* D = delta.values().data();
  const Scalar* A = a.values().data();
  const Scalar* Bm = b.values().data();
  const Scalar* Cm = c.values().data();
  Vec decay(E), drive(E);
  for (int s = 0; s < S; ++s) {
    std::fill(h.begin(), h.end(), Scalar(0));
    for (int step = 0; step < L; ++step) {
      const int t = reverse ? L - 1 - step : step;
      const std::int64_t te = (static_cast<std::int64_t>(s) * L + t) * E;
      const std::int64_t tn = (static_cast<std::int64_t>(s) * L + t) * N;
      CVecMap dt(D + te, E);
      decay = (dt * CVecMap(A, E)).exp();
      drive = dt * CVecMap(U + te, E);
      CVecMap bt(Bm + tn, N);
      CVecMap ct(Cm + tn, N);
      for (int e = 0; e < E; ++e) {
        VecMap he(h.data() + static_cast<std::int64_t>(e) * N, N);
        he = decay[e] * he + drive[e] * bt;
        y[te + e] = (ct * he).sum();
      }
    }
  }
  return Tensor::from_op(u.shape(), std::move(y), {u, delta, a, b, c}, [S, L, E, N, reverse](detail::Node& self) {
    const Scalar* U = self.inputs[0]->value.data();
    const Scalar* D = self.inputs[1]->value.data();
    const Scalar* A = self.inputs[2]->value.data();
    const Scalar* Bm = self.inputs[3]->value.data();
    const Scalar* Cm = self.inputs[4]->value.data();
    const Scalar* G = self.grad.data();
    Scalar* gu = self.input_grad(0);
    Scalar* gd = self.input_grad(1);
    Scalar* ga = self.input_grad(2);
    Scalar* gb = self.input_grad(3);
    Scalar* gc = self.input_grad(4);
    const std::int64_t EN = static_cast<std::int64_t>(E) * N;
    Buffer states(static_cast<std::size_t>(L) * EN);
    Buffer carry(static_cast<std::size_t>(EN));
    Vec gb_t(N), gc_t(N), g(N), decay(E), drive(E);
    Vec ga_acc = Vec::Zero(E);
    for (int s = 0; s < S; ++s) {
      // Recompute the hidden states of this sequence in scan order.
      for (int step = 0; step < L; ++step) {
        const int t = reverse ? L - 1 - step : step;
        const std::int64_t te = (static_cast<std::int64_t>(s) * L + t) * E;
        CVecMap dt(D + te, E);
        decay = (dt * CVecMap(A, E)).exp();
        drive = dt * CVecMap(U + te, E);
        CVecMap bt(Bm + (static_cast<std::int64_t>(s) * L + t) * N, N);
        Scalar* cur = states.data() + step * EN;
        for (int e = 0; e < E; ++e) {
          VecMap he(cur + static_cast<std::int64_t>(e) * N, N);
          if (step) {
            he = decay[e] * CVecMap(cur - EN + static_cast<std::int64_t>(e) * N, N) + drive[e] * bt;
          } else {
            he = drive[e] * bt;
          }
        }
      }
      std::fill(carry.begin(), carry.end(), Scalar(0));
      for (int step = L - 1; step >= 0; --step) {
        const int t = reverse ? L - 1 - step : step;
        const std::int64_t te = (static_cast<std::int64_t>(s) * L + t) * E;
        const std::int64_t tn = (static_cast<std::int64_t>(s) * L + t) * N;
        CVecMap dt(D + te, E);
        decay = (dt * CVecMap(A, E)).exp();
        drive = dt * CVecMap(U + te, E);
        CVecMap bt(Bm + tn, N);
        CVecMap ct(Cm + tn, N);
        const Scalar* cur = states.data() + step * EN;
        gb_t.setZero();
        gc_t.setZero();
        for (int e = 0; e < E; ++e) {
          const Scalar gy = G[te + e];
          CVecMap he(cur + static_cast<std::int64_t>(e) * N, N);
          VecMap gh(carry.data() + static_cast<std::int64_t>(e) * N, N);
          g = gh + gy * ct;
          gc_t += gy * he;
          const Scalar g_decay = step ? (g * CVecMap(cur - EN + static_cast<std::int64_t>(e) * N, N)).sum() : Scalar(0);
          const Scalar g_drive = (g * bt).sum();
          gb_t += drive[e] * g;
          gh = decay[e] * g;
          if (gd) gd[te + e] += g_drive * U[te + e] + g_decay * decay[e] * A[e];
          if (gu) gu[te + e] += g_drive * dt[e];
          ga_acc[e] += g_decay * decay[e] * dt[e];
        }
        if (gb) VecMap(gb + tn, N) += gb_t;
        if (gc) VecMap(gc + tn, N) += gc_t;
      }
    }
    if (ga) VecMap(ga, E) += ga_acc;
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
  if (q.rank() != 4 || k.shape() != q.shape() || v.shape() != q.shape()) {
    fail(ErrorKind::kShape, "attention expects matching [S,L,H,D] inputs, got " + shape_str(q.shape()));
  }
  const int S = q.dim(0), L = q.dim(1), H = q.dim(2), Dh = q.dim(3);
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(Dh));
  const bool keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  Buffer out(q.values().size());
  Buffer probs(keep ? static_cast<std::size_t>(S) * H * L * L : 0);
  Mat p(L, L);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(H) * Dh);
  for (int s = 0; s < S; ++s)
    for (int h = 0; h < H; ++h) {
      const std::int64_t base = static_cast<std::int64_t>(s) * L * H * Dh + static_cast<std::int64_t>(h) * Dh;
      CStridedMap Q(q.values().data() + base, L, Dh, stride);
      CStridedMap K(k.values().data() + base, L, Dh, stride);
      CStridedMap V(v.values().data() + base, L, Dh, stride);
      p.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (int i = 0; i < L; ++i) {
        const int valid = causal ? i + 1 : L;
        auto row = p.row(i).head(valid).array();
        const Scalar mx = row.maxCoeff();
        row = (row - mx).exp();
        row /= row.sum();
        if (valid < L) p.row(i).tail(L - valid).setZero();
      }
      StridedMap(out.data() + base, L, Dh, stride).noalias() = p * V;
      if (keep) MatMap(probs.data() + (static_cast<std::int64_t>(s) * H + h) * L * L, L, L) = p;
    }
  return Tensor::from_op(q.shape(), std::move(out), {q, k, v},
                         [S, L, H, Dh, inv_sqrt, probs = std::move(probs)](detail::Node& self) {
                           const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(H) * Dh);
                           Scalar* gq = self.input_grad(0);
                           Scalar* gk = self.input_grad(1);
                           Scalar* gv = self.input_grad(2);
                           Mat dp(L, L);
                           for (int s = 0; s < S; ++s)
                             for (int h = 0; h < H; ++h) {
                               const std::int64_t base =
                                   static_cast<std::int64_t>(s) * L * H * Dh + static_cast<std::int64_t>(h) * Dh;
                               CMatMap P(probs.data() + (static_cast<std::int64_t>(s) * H + h) * L * L, L, L);
                               CStridedMap dO(self.grad.data() + base, L, Dh, stride);
                               CStridedMap Q(self.inputs[0]->value.data() + base, L, Dh, stride);
                               CStridedMap K(self.inputs[1]->value.data() + base, L, Dh, stride);
                               CStridedMap V(self.inputs[2]->value.data() + base, L, Dh, stride);
                               if (gv) StridedMap(gv + base, L, Dh, stride).noalias() += P.transpose() * dO;
                               dp.noalias() = dO * V.transpose();
                               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot =
                                   (dp.array() * P.array()).rowwise().sum();
                               dp = (P.array() * (dp.array().colwise() - rowdot.array())).matrix() * inv_sqrt;
                               if (gq) StridedMap(gq + base, L, Dh, stride).noalias() += dp * K;
                               if (gk) StridedMap(gk + base, L, Dh, stride).noalias() += dp.transpose() * Q;
                             }
                         });
}

Tensor straight_through(const Tensor& pre, Buffer values) {
  if (static_cast<std::int64_t>(values.size()) != pre.numel()) fail(ErrorKind::kShape, "straight_through: size mismatch");
  return Tensor::from_op(pre.shape(), std::move(values), {pre}, [](detail::Node& self) {
    if (Scalar* gx = self.input_grad(0)) {
      const auto m = ssize(self.value);
      VecMap(gx, m) += CVecMap(self.grad.data(), m);
    }
  });
}

}  // namespace ops

DVTK_NAMESPACE_END
