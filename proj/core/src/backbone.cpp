#include "dvtk/backbone.hpp"

DVTK_NAMESPACE_BEGIN

namespace {

std::string kernel_str(const KernelTriplet& k) {
  return std::to_string(k.t) + "x" + std::to_string(k.h) + "x" + std::to_string(k.w);
}

void require_video5(const Tensor& x, const char* who) {
  if (!x.defined() || x.rank() != 5) {
    fail(ErrorKind::kShape, std::string(who) + " expects [B, T, H, W, C], got " + (x.defined() ? shape_str(x.shape()) : "undefined"));
  }
}

// Temporal factor collapses to 1 on the single-frame path.
KernelTriplet effective(const KernelTriplet& k, bool single_frame) {
  return single_frame ? KernelTriplet{1, k.h, k.w} : k;
}

}  // namespace

KernelTriplet TokenizerConfig::compression() const {
  KernelTriplet c;
  for (const auto& k : kernels) {
    c.t *= k.t;
    c.h *= k.h;
    c.w *= k.w;
  }
  return c;
}

void TokenizerConfig::validate() const {
  if (kernels.empty()) fail(ErrorKind::kConfig, "kernels: at least one level is required");
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const auto& k = kernels[i];
    if (k.t < 1 || k.h < 1 || k.w < 1) {
      fail(ErrorKind::kConfig, "kernels[" + std::to_string(i) + "]: factors must be >= 1, got " + kernel_str(k));
    }
  }
  if (hidden_dims.size() != kernels.size()) {
    fail(ErrorKind::kConfig, "hidden_dims: expected " + std::to_string(kernels.size()) + " entries (one per level), got " +
                                 std::to_string(hidden_dims.size()));
  }
  for (int d : hidden_dims) {
    if (d < 1) fail(ErrorKind::kConfig, "hidden_dims: widths must be >= 1");
  }
  if (state_dim < 1) fail(ErrorKind::kConfig, "state_dim must be >= 1");
  if (layers_per_block < 1) fail(ErrorKind::kConfig, "layers_per_block must be >= 1");
  if (video_channels < 1) fail(ErrorKind::kConfig, "video_channels must be >= 1");
  dvtk::validate(quantizer);
  const int need = required_channels(quantizer);
  if (latent_channels != need) {
    fail(ErrorKind::kConfig, "latent_channels is " + std::to_string(latent_channels) + " but quantizer " +
                                 describe(quantizer) + " requires " + std::to_string(need));
  }
}

std::array<int, 3> latent_extent(const TokenizerConfig& config, int frames, int height, int width) {
  const KernelTriplet c = config.compression();
  if (frames < 1 || height < 1 || width < 1) {
    fail(ErrorKind::kShape, "video extent must be positive, got " + std::to_string(frames) + "x" + std::to_string(height) +
                                "x" + std::to_string(width));
  }
  const bool frames_ok = frames == 1 || frames % c.t == 0;
  if (!frames_ok || height % c.h != 0 || width % c.w != 0) {
    fail(ErrorKind::kShape, "video " + std::to_string(frames) + "x" + std::to_string(height) + "x" + std::to_string(width) +
                                " is not divisible by the compression " + kernel_str(c) + ": frames must be 1 or a multiple of " +
                                std::to_string(c.t) + ", height a multiple of " + std::to_string(c.h) +
                                ", width a multiple of " + std::to_string(c.w));
  }
  return {frames == 1 ? 1 : frames / c.t, height / c.h, width / c.w};
}

std::int64_t token_count(const TokenizerConfig& config, int frames, int height, int width) {
  const auto e = latent_extent(config, frames, height, width);
  return static_cast<std::int64_t>(e[0]) * e[1] * e[2] * codes_per_pixel(config.quantizer);
}

Tensor space_to_depth(const Tensor& x, const KernelTriplet& k) {
  require_video5(x, "space_to_depth");
  const int B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  if (T % k.t || H % k.h || W % k.w) {
    fail(ErrorKind::kShape, "patchify: " + shape_str(x.shape()) + " not divisible by kernel " + kernel_str(k));
  }
  if (k.volume() == 1) return x;
  const Tensor split = ops::reshape(x, {B, T / k.t, k.t, H / k.h, k.h, W / k.w, k.w, C});
  const Tensor moved = ops::permute(split, {0, 1, 3, 5, 2, 4, 6, 7});
  return ops::reshape(moved, {B, T / k.t, H / k.h, W / k.w, k.volume() * C});
}

Tensor depth_to_space(const Tensor& x, const KernelTriplet& k) {
  require_video5(x, "depth_to_space");
  const int B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  if (C % k.volume()) {
    fail(ErrorKind::kShape, "topixel: channel count " + std::to_string(C) + " not divisible by kernel volume " +
                                std::to_string(k.volume()));
  }
  if (k.volume() == 1) return x;
  const int out = C / k.volume();
  const Tensor split = ops::reshape(x, {B, T, H, W, k.t, k.h, k.w, out});
  const Tensor moved = ops::permute(split, {0, 1, 4, 2, 5, 3, 6, 7});
  return ops::reshape(moved, {B, T * k.t, H * k.h, W * k.w, out});
}

Tensor token_pool(const Tensor& x, const KernelTriplet& k) {
  if (k.volume() == 1) return x;
  return ops::avg_pool3d(x, k.array());
}

Tensor token_interp(const Tensor& x, const KernelTriplet& k) {
  if (k.volume() == 1) return x;
  return ops::upsample_nearest3d(x, k.array());
}

Tensor spatial_mix(const Tensor& x, const SequenceMixer& mixer) {
  require_video5(x, "spatial_mix");
  const Shape s = x.shape();
  const Tensor seq = ops::reshape(x, {s[0] * s[1], s[2] * s[3], s[4]});
  return ops::reshape(mixer(seq), s);
}

Tensor temporal_mix(const Tensor& x, const SequenceMixer& mixer) {
  require_video5(x, "temporal_mix");
  const Shape s = x.shape();
  const Tensor moved = ops::permute(x, {0, 2, 3, 1, 4});  // [B, H, W, T, C]
  const Tensor seq = ops::reshape(moved, {s[0] * s[2] * s[3], s[1], s[4]});
  const Tensor mixed = ops::reshape(mixer(seq), {s[0], s[2], s[3], s[1], s[4]});
  return ops::permute(mixed, {0, 3, 1, 2, 4});
}

Patchify::Patchify(int in, int out, const KernelTriplet& kernel, EmbeddingKind embedding, Rng& rng)
    : kernel_(kernel), embedding_(embedding) {
  if (embedding == EmbeddingKind::kConv3d) {
    ops::ConvGeometry g;
    g.kernel = kernel.array();
    g.stride = kernel.array();
    conv_ = Conv3d(in, out, g, rng);
  } else {
    linear_ = Linear(kernel.volume() * in, out, true, rng);
  }
}

Tensor Patchify::operator()(const Tensor& x) const {
  require_video5(x, "patchify");
  Tensor in = x;
  if (x.dim(1) == 1 && kernel_.t > 1) in = ops::concat(std::vector<Tensor>(static_cast<std::size_t>(kernel_.t), x), 1);
  if (in.dim(1) % kernel_.t || in.dim(2) % kernel_.h || in.dim(3) % kernel_.w) {
    fail(ErrorKind::kShape, "patchify: " + shape_str(x.shape()) + " not divisible by kernel " + kernel_str(kernel_));
  }
  if (embedding_ == EmbeddingKind::kConv3d) return conv_(in);
  return linear_(space_to_depth(in, kernel_));
}

void Patchify::collect(ParamList& out, const std::string& prefix) const {
  if (embedding_ == EmbeddingKind::kConv3d) {
    conv_.collect(out, prefix + ".conv");
  } else {
    linear_.collect(out, prefix + ".linear");
  }
}

ToPixel::ToPixel(int in, int out, const KernelTriplet& kernel, Rng& rng)
    : kernel_(kernel), proj_(in, out * kernel.volume(), true, rng) {}

Tensor ToPixel::operator()(const Tensor& x, bool single_frame) const {
  Tensor y = depth_to_space(proj_(x), kernel_);
  if (single_frame && kernel_.t > 1) y = ops::slice(y, 1, y.dim(1) - 1, y.dim(1));
  return y;
}

void ToPixel::collect(ParamList& out, const std::string& prefix) const { proj_.collect(out, prefix + ".proj"); }

Encoder::Encoder(const TokenizerConfig& config, Rng& rng) : config_(config) {
  const int L = config.levels();
  int in = config.video_channels;
  for (int l = 0; l < L; ++l) {
    const int d = config.hidden_dims[l];
    Block b{Patchify(in, d, config.kernels[l], config.embedding, rng),
            SequenceMixer(config.attention, d, config.state_dim, config.layers_per_block, false, rng),
            SequenceMixer(config.attention, d, config.state_dim, config.layers_per_block, true, rng),
            std::nullopt};
    if (config.skip_connections && l >= 1 && config.hidden_dims[l - 1] != d) {
      b.skip_proj = Linear(config.hidden_dims[l - 1], d, false, rng);
    }
    blocks_.push_back(std::move(b));
    in = d;
  }
  to_latent_ = Linear(in, config.latent_channels, true, rng);
}

namespace {
constexpr Scalar kLatentBound = 3;
}  // namespace

Tensor Encoder::operator()(const Tensor& video) const {
  const bool single_frame = video.dim(1) == 1;
  Tensor in = video;
  Tensor prev;  // u_{l-1}
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    const Tensor u = temporal_mix(spatial_mix(b.patchify(in), b.spatial), b.temporal);
    in = u;
    if (config_.skip_connections && prev.defined()) {
      Tensor pooled = token_pool(prev, effective(config_.kernels[l], single_frame));
      if (b.skip_proj) pooled = (*b.skip_proj)(pooled);
      in = ops::add(u, pooled);
    }
    prev = u;
  }
  // Soft bound on the latent. The quantizer passes gradients straight through,
  // so without it saturated channels keep drifting outward and stop carrying
  // information.
  return ops::scale(ops::tanh(ops::scale(to_latent_(in), 1 / kLatentBound)), kLatentBound);
}

void Encoder::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = prefix + ".block" + std::to_string(l);
    blocks_[l].patchify.collect(out, p + ".patchify");
    blocks_[l].spatial.collect(out, p + ".spatial");
    blocks_[l].temporal.collect(out, p + ".temporal");
    if (blocks_[l].skip_proj) blocks_[l].skip_proj->collect(out, p + ".skip_proj");
  }
  to_latent_.collect(out, prefix + ".to_latent");
}

Decoder::Decoder(const TokenizerConfig& config, Rng& rng) : config_(config) {
  const int L = config.levels();
  from_latent_ = Linear(config.latent_channels, config.hidden_dims[L - 1], true, rng);
  for (int l = 0; l < L; ++l) {
    const int d = config.hidden_dims[l];
    const int out = l == 0 ? config.video_channels : config.hidden_dims[l - 1];
    Block b{SequenceMixer(config.attention, d, config.state_dim, config.layers_per_block, true, rng),
            SequenceMixer(config.attention, d, config.state_dim, config.layers_per_block, false, rng),
            ToPixel(d, out, config.kernels[l], rng), std::nullopt};
    // Level l's output meets the interpolated output of level l+1, which has width d.
    if (config.skip_connections && l >= 1 && l + 1 < L && d != out) b.skip_proj = Linear(d, out, false, rng);
    blocks_.push_back(std::move(b));
  }
}

Tensor Decoder::operator()(const Tensor& latent, bool single_frame) const {
  require_video5(latent, "decode");
  if (latent.dim(4) != config_.latent_channels) {
    fail(ErrorKind::kShape, "decode: latent has " + std::to_string(latent.dim(4)) + " channels, expected " +
                                std::to_string(config_.latent_channels));
  }
  Tensor in = from_latent_(latent);
  Tensor prev;  // û_{l+1}
  for (int l = static_cast<int>(blocks_.size()) - 1; l >= 0; --l) {
    const Block& b = blocks_[l];
    const Tensor u = b.topixel(spatial_mix(temporal_mix(in, b.temporal), b.spatial), single_frame);
    in = u;
    if (config_.skip_connections && prev.defined() && l >= 1) {
      Tensor up = token_interp(prev, effective(config_.kernels[l], single_frame));
      if (b.skip_proj) up = (*b.skip_proj)(up);
      in = ops::add(u, up);
    }
    prev = u;
  }
  return in;
}

void Decoder::collect(ParamList& out, const std::string& prefix) const {
  from_latent_.collect(out, prefix + ".from_latent");
  for (std::size_t l = blocks_.size(); l-- > 0;) {
    const std::string p = prefix + ".block" + std::to_string(l);
    blocks_[l].temporal.collect(out, p + ".temporal");
    blocks_[l].spatial.collect(out, p + ".spatial");
    blocks_[l].topixel.collect(out, p + ".topixel");
    if (blocks_[l].skip_proj) blocks_[l].skip_proj->collect(out, p + ".skip_proj");
  }
}

namespace {

const TokenizerConfig& validated(const TokenizerConfig& config) {
  config.validate();
  return config;
}

}  // namespace

Tokenizer::Tokenizer(const TokenizerConfig& config, std::uint64_t seed) : Tokenizer(validated(config), Rng(seed)) {}

Tokenizer::Tokenizer(const TokenizerConfig& config, Rng&& rng)
    : config_(config), encoder_(config, rng), decoder_(config, rng) {}

Tensor Tokenizer::encode(const Tensor& video) const {
  require_video5(video, "encode");
  if (video.dim(4) != config_.video_channels) {
    fail(ErrorKind::kShape, "encode: video has " + std::to_string(video.dim(4)) + " channels, expected " +
                                std::to_string(config_.video_channels));
  }
  latent_extent(config_, video.dim(1), video.dim(2), video.dim(3));
  return encoder_(video);
}

Tensor Tokenizer::decode(const Tensor& latent, int frames) const {
  const Tensor y = decoder_(latent, frames == 1);
  return training_ ? y : ops::clamp(y, Scalar(-1), Scalar(1));
}

Reconstruction Tokenizer::forward(const Tensor& video) const {
  Reconstruction r;
  r.latent = encode(video);
  r.quant = quantize(r.latent, config_.quantizer);
  r.video = decode(r.quant.quantized, video.dim(1));
  return r;
}

TokenGrid Tokenizer::tokenize(const Tensor& video) const {
  if (video.rank() != 4) fail(ErrorKind::kShape, "tokenize expects [T, H, W, C], got " + shape_str(video.shape()));
  Shape batched = video.shape();
  batched.insert(batched.begin(), 1);
  const Tensor latent = encode(ops::reshape(video, batched));
  TokenGrid grid = quantize(latent, config_.quantizer).grid;
  grid.dims.erase(grid.dims.begin());
  return grid;
}

Tensor Tokenizer::detokenize(const TokenGrid& grid, int frames) const {
  if (grid.quantizer != config_.quantizer) {
    fail(ErrorKind::kCompatibility, "token grid quantizer " + describe(grid.quantizer) + " differs from model quantizer " +
                                        describe(config_.quantizer));
  }
  if (grid.dims.size() != 3) fail(ErrorKind::kShape, "detokenize expects a T' x H' x W' grid");
  Tensor latent = dequantize(grid);
  Shape batched = latent.shape();
  batched.insert(batched.begin(), 1);
  const Tensor video = decode(ops::reshape(latent, batched), frames);
  Shape single(video.shape().begin() + 1, video.shape().end());
  return ops::reshape(video, single);
}

ParamList Tokenizer::parameters() const {
  ParamList out;
  encoder_.collect(out, "encoder");
  decoder_.collect(out, "decoder");
  return out;
}

DVTK_NAMESPACE_END
