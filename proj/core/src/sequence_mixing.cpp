#include "dvtk/sequence_mixing.hpp"

#include <cmath>

DVTK_NAMESPACE_BEGIN

namespace {

int head_count(int dim) {
  for (int h : {4, 2}) {
    if (dim % h == 0) return h;
  }
  return 1;
}

}  // namespace

SelectiveSsmLayer::SelectiveSsmLayer(int dim, int state_dim, bool bidirectional, Rng& rng)
    : dim_(dim),
      state_dim_(state_dim),
      dt_rank_(std::max(1, (dim + 15) / 16)),
      bidirectional_(bidirectional),
      norm_(dim),
      in_proj_(dim, 2 * dim, false, rng),
      x_proj_(dim, dt_rank_ + 2 * state_dim, false, rng),
      dt_proj_(dt_rank_, dim, true, rng),
      out_proj_(dim, dim, false, rng) {
  // Decay rates spread over [1, 16]; step sizes start in [1e-3, 1e-1].
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Buffer a_log(static_cast<std::size_t>(dim)), dt_bias(static_cast<std::size_t>(dim));
  for (int e = 0; e < dim; ++e) {
    a_log[e] = static_cast<Scalar>(std::log(1.0 + 15.0 * unit(rng)));
    const double dt = std::exp(std::log(1e-3) + unit(rng) * (std::log(1e-1) - std::log(1e-3)));
    dt_bias[e] = static_cast<Scalar>(dt + std::log(-std::expm1(-dt)));  // softplus^-1(dt)
  }
  a_log_ = make_param({dim}, std::move(a_log));
  skip_ = constant_param({dim}, Scalar(1));
  std::copy(dt_bias.begin(), dt_bias.end(), dt_proj_.bias().mutable_values().begin());
}

Tensor SelectiveSsmLayer::operator()(const Tensor& x) const {
  const Tensor h = norm_(x);
  const Tensor xz = in_proj_(h);
  const Tensor u = ops::silu(ops::slice(xz, -1, 0, dim_));
  const Tensor gate = ops::silu(ops::slice(xz, -1, dim_, 2 * dim_));
  const Tensor dbc = x_proj_(u);
  const Tensor delta = ops::softplus(dt_proj_(ops::slice(dbc, -1, 0, dt_rank_)));
  const Tensor b = ops::slice(dbc, -1, dt_rank_, dt_rank_ + state_dim_);
  const Tensor c = ops::slice(dbc, -1, dt_rank_ + state_dim_, dt_rank_ + 2 * state_dim_);
  const Tensor a = ops::neg(ops::exp(a_log_));
  Tensor y = ops::selective_scan(u, delta, a, b, c, false);
  if (bidirectional_) y = ops::add(y, ops::selective_scan(u, delta, a, b, c, true));
  y = ops::add(y, ops::mul_broadcast(u, skip_));
  return ops::add(x, out_proj_(ops::mul(y, gate)));
}

void SelectiveSsmLayer::collect(ParamList& out, const std::string& prefix) const {
  norm_.collect(out, prefix + ".norm");
  in_proj_.collect(out, prefix + ".in_proj");
  x_proj_.collect(out, prefix + ".x_proj");
  dt_proj_.collect(out, prefix + ".dt_proj");
  out_proj_.collect(out, prefix + ".out_proj");
  out.emplace_back(prefix + ".a_log", a_log_);
  out.emplace_back(prefix + ".skip", skip_);
}

AttentionLayer::AttentionLayer(int dim, bool causal, Rng& rng)
    : dim_(dim),
      heads_(head_count(dim)),
      causal_(causal),
      norm1_(dim),
      norm2_(dim),
      qkv_(dim, 3 * dim, true, rng),
      out_(dim, dim, true, rng),
      ff1_(dim, 2 * dim, true, rng),
      ff2_(2 * dim, dim, true, rng) {}

Tensor AttentionLayer::operator()(const Tensor& x) const {
  const int S = x.dim(0), L = x.dim(1);
  const int hd = dim_ / heads_;
  const Tensor qkv = ops::reshape(qkv_(norm1_(x)), {S, L, 3, heads_, hd});
  auto part = [&](int i) { return ops::reshape(ops::slice(qkv, 2, i, i + 1), {S, L, heads_, hd}); };
  const Tensor att = ops::attention(part(0), part(1), part(2), causal_);
  const Tensor y = ops::add(x, out_(ops::reshape(att, {S, L, dim_})));
  return ops::add(y, ff2_(ops::silu(ff1_(norm2_(y)))));
}

void AttentionLayer::collect(ParamList& out, const std::string& prefix) const {
  norm1_.collect(out, prefix + ".norm1");
  qkv_.collect(out, prefix + ".qkv");
  out_.collect(out, prefix + ".out");
  norm2_.collect(out, prefix + ".norm2");
  ff1_.collect(out, prefix + ".ff1");
  ff2_.collect(out, prefix + ".ff2");
}

Tensor sinusoidal_positions(int length, int dim) {
  Buffer pe(static_cast<std::size_t>(length) * dim);
  for (int p = 0; p < length; ++p) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(dim));
      const double angle = p * freq;
      pe[static_cast<std::size_t>(p) * dim + i] = static_cast<Scalar>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor({length, dim}, std::move(pe));
}

SequenceMixer::SequenceMixer(MixerKind kind, int dim, int state_dim, int layers, bool causal, Rng& rng)
    : kind_(kind), causal_(causal) {
  for (int i = 0; i < layers; ++i) {
    if (kind == MixerKind::kStateSpace) {
      ssm_.emplace_back(dim, state_dim, !causal, rng);
    } else {
      attn_.emplace_back(dim, causal, rng);
    }
  }
}

Tensor SequenceMixer::operator()(const Tensor& seq) const {
  Tensor x = seq;
  if (kind_ == MixerKind::kStateSpace) {
    for (const auto& layer : ssm_) x = layer(x);
  } else {
    x = ops::add_broadcast(x, sinusoidal_positions(x.dim(1), x.dim(2)));
    for (const auto& layer : attn_) x = layer(x);
  }
  return x;
}

void SequenceMixer::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < ssm_.size(); ++i) ssm_[i].collect(out, prefix + ".ssm" + std::to_string(i));
  for (std::size_t i = 0; i < attn_.size(); ++i) attn_[i].collect(out, prefix + ".attn" + std::to_string(i));
}

DVTK_NAMESPACE_END
