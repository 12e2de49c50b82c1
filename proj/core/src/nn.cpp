#include "dvtk/nn.hpp"

#include <cmath>

DVTK_NAMESPACE_BEGIN

Tensor make_param(Shape shape, Buffer values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

Tensor uniform_param(Shape shape, Scalar bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  Buffer v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Scalar>(dist(rng));
  return make_param(std::move(shape), std::move(v));
}

Tensor constant_param(Shape shape, Scalar value) {
  Buffer v(static_cast<std::size_t>(shape_numel(shape)), value);
  return make_param(std::move(shape), std::move(v));
}

std::int64_t count_parameters(const ParamList& params) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

Linear::Linear(int in, int out, bool bias, Rng& rng) {
  const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(in));
  weight_ = uniform_param({in, out}, bound, rng);
  if (bias) bias_ = uniform_param({out}, bound, rng);
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight_);
  if (bias_.defined()) out.emplace_back(prefix + ".bias", bias_);
}

LayerNorm::LayerNorm(int dim) : gamma_(constant_param({dim}, Scalar(1))), beta_(constant_param({dim}, Scalar(0))) {}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma_);
  out.emplace_back(prefix + ".beta", beta_);
}

Conv3d::Conv3d(int in, int out, const ops::ConvGeometry& geom, Rng& rng, bool trainable) : geom_(geom) {
  const int fan_in = geom.kernel[0] * geom.kernel[1] * geom.kernel[2] * in;
  const Scalar bound = std::sqrt(Scalar(6) / static_cast<Scalar>(fan_in));
  weight_ = uniform_param({fan_in, out}, bound, rng);
  bias_ = constant_param({out}, Scalar(0));
  weight_.set_requires_grad(trainable);
  bias_.set_requires_grad(trainable);
}

void Conv3d::collect(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

DVTK_NAMESPACE_END
