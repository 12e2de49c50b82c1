#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dvtk/ops.hpp"

DVTK_NAMESPACE_BEGIN

using Rng = std::mt19937_64;

/// Named parameter handles, in a stable registration order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

Tensor make_param(Shape shape, Buffer values);
Tensor uniform_param(Shape shape, Scalar bound, Rng& rng);
Tensor constant_param(Shape shape, Scalar value);

std::int64_t count_parameters(const ParamList& params);

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, bool bias, Rng& rng);

  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight_, bias_); }
  void collect(ParamList& out, const std::string& prefix) const;

  int in_features() const { return weight_.dim(0); }
  int out_features() const { return weight_.dim(1); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;  // [in, out]
  Tensor bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int dim);

  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma_, beta_); }
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  Tensor gamma_;
  Tensor beta_;
};

class Conv3d {
 public:
  Conv3d() = default;
  /// He-uniform initialised; pass `trainable = false` for frozen feature extractors.
  Conv3d(int in, int out, const ops::ConvGeometry& geom, Rng& rng, bool trainable = true);

  Tensor operator()(const Tensor& x) const { return ops::conv3d(x, weight_, bias_, geom_); }
  void collect(ParamList& out, const std::string& prefix) const;

  const ops::ConvGeometry& geometry() const { return geom_; }

 private:
  Tensor weight_;  // [kt*kh*kw*in, out]
  Tensor bias_;
  ops::ConvGeometry geom_;
};

DVTK_NAMESPACE_END
