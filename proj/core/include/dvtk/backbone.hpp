#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "dvtk/quantization.hpp"
#include "dvtk/sequence_mixing.hpp"

DVTK_NAMESPACE_BEGIN

/// Temporal, height and width factors of one level.
struct KernelTriplet {
  int t = 1;
  int h = 1;
  int w = 1;

  std::array<int, 3> array() const { return {t, h, w}; }
  int volume() const { return t * h * w; }
  bool operator==(const KernelTriplet&) const = default;
};

enum class EmbeddingKind {
  kConv3d,  // 3D convolution with kernel = stride
  kLinear,  // flatten each patch, then a linear projection
};

struct TokenizerConfig {
  std::vector<KernelTriplet> kernels{{2, 4, 4}, {2, 2, 2}, {2, 1, 1}};
  std::vector<int> hidden_dims{128, 128, 128};
  int latent_channels = 12;
  MixerKind attention = MixerKind::kStateSpace;
  int state_dim = 64;
  int layers_per_block = 2;
  EmbeddingKind embedding = EmbeddingKind::kConv3d;
  bool skip_connections = true;
  QuantizerSpec quantizer = ChannelSplitSpec{FsqSpec{{8, 8, 8, 5, 5, 5}}, 2};
  int video_channels = 3;

  int levels() const { return static_cast<int>(kernels.size()); }
  /// Product of the per-level factors.
  KernelTriplet compression() const;
  /// Throws a configuration error naming the offending field.
  void validate() const;
  bool operator==(const TokenizerConfig&) const = default;
};

/// Latent extent (T', H', W') for a T x H x W video. A single frame stays a
/// single frame. Throws a shape error naming the required divisors.
std::array<int, 3> latent_extent(const TokenizerConfig& config, int frames, int height, int width);
/// T'·H'·W'·codes_per_pixel for one video.
std::int64_t token_count(const TokenizerConfig& config, int frames, int height, int width);

/// [B, T, H, W, C] -> [B, T/t, H/h, W/w, t*h*w*C], patch flattened as (dt, dh, dw, c).
Tensor space_to_depth(const Tensor& x, const KernelTriplet& k);
/// Inverse of space_to_depth: [B, T, H, W, t*h*w*C] -> [B, T*t, H*h, W*w, C].
Tensor depth_to_space(const Tensor& x, const KernelTriplet& k);
Tensor token_pool(const Tensor& x, const KernelTriplet& k);
Tensor token_interp(const Tensor& x, const KernelTriplet& k);
/// Mixes over H*W within each frame: [B, T, H, W, C] viewed as [B*T, H*W, C].
Tensor spatial_mix(const Tensor& x, const SequenceMixer& mixer);
/// Mixes over T at each position: [B, T, H, W, C] viewed as [B*H*W, T, C].
Tensor temporal_mix(const Tensor& x, const SequenceMixer& mixer);

/// Downsampling patch embedding.
class Patchify {
 public:
  Patchify(int in, int out, const KernelTriplet& kernel, EmbeddingKind embedding, Rng& rng);

  /// A single-frame input is front-padded by repeating it to the temporal
  /// kernel size, so images pass through multi-frame kernels.
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  KernelTriplet kernel_;
  EmbeddingKind embedding_;
  Conv3d conv_;
  Linear linear_;
};

/// Channel projection followed by a space-time pixel shuffle.
class ToPixel {
 public:
  ToPixel(int in, int out, const KernelTriplet& kernel, Rng& rng);

  /// With `single_frame` only the last of the t generated frames is kept.
  Tensor operator()(const Tensor& x, bool single_frame) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  KernelTriplet kernel_;
  Linear proj_;  // a 1x1x1 convolution
};

class Encoder {
 public:
  Encoder(const TokenizerConfig& config, Rng& rng);

  /// [B, T, H, W, C] -> [B, T', H', W', latent_channels].
  Tensor operator()(const Tensor& video) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  struct Block {
    Patchify patchify;
    SequenceMixer spatial;
    SequenceMixer temporal;
    std::optional<Linear> skip_proj;  // only when widths differ
  };
  TokenizerConfig config_;
  std::vector<Block> blocks_;
  Linear to_latent_;
};

class Decoder {
 public:
  Decoder(const TokenizerConfig& config, Rng& rng);

  /// [B, T', H', W', latent_channels] -> [B, T, H, W, C]. `single_frame`
  /// mirrors the encoder's image path.
  Tensor operator()(const Tensor& latent, bool single_frame) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  struct Block {
    SequenceMixer temporal;
    SequenceMixer spatial;
    ToPixel topixel;
    std::optional<Linear> skip_proj;
  };
  TokenizerConfig config_;
  Linear from_latent_;
  std::vector<Block> blocks_;  // index l-1 holds level l
};

struct Reconstruction {
  Tensor latent;
  QuantOutput quant;
  Tensor video;
};

/// Encoder, quantizer and decoder with deterministic initialisation.
class Tokenizer {
 public:
  Tokenizer(const TokenizerConfig& config, std::uint64_t seed);

  const TokenizerConfig& config() const { return config_; }

  /// Batched videos [B, T, H, W, C]; checks divisibility first.
  Tensor encode(const Tensor& video) const;
  /// `frames` is the original clip length; 1 selects the single-image path.
  /// Outputs are clamped to [-1, 1] outside training.
  Tensor decode(const Tensor& latent, int frames) const;
  Reconstruction forward(const Tensor& video) const;

  /// Single video [T, H, W, C] -> grid over (T', H', W').
  TokenGrid tokenize(const Tensor& video) const;
  /// Grid -> video [T, H, W, C].
  Tensor detokenize(const TokenGrid& grid, int frames) const;

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  ParamList parameters() const;

 private:
  Tokenizer(const TokenizerConfig& config, Rng&& rng);

  TokenizerConfig config_;
  Encoder encoder_;
  Decoder decoder_;
  bool training_ = false;
};

DVTK_NAMESPACE_END
