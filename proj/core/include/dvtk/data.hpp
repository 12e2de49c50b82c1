#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dvtk/nn.hpp"

DVTK_NAMESPACE_BEGIN

enum class TextureMode { kFlat, kGradient, kNoise };

const char* texture_name(TextureMode mode);
TextureMode parse_texture(const std::string& name);

struct SyntheticSceneSpec {
  int height = 32;
  int width = 32;
  int frames = 16;
  int objects = 3;
  double motion = 1.0;  // pixels per frame, exact away from walls
  TextureMode texture = TextureMode::kGradient;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SyntheticSceneSpec&) const = default;
};

struct SyntheticScene {
  Tensor video;  // [T, H, W, 3] in [-1, 1]
  /// Object centres per frame, (row, col) in pixel units.
  std::vector<std::vector<std::array<double, 2>>> centers;
};

/// Moving discs and boxes over a textured background. Objects travel at
/// exactly `motion` pixels per frame and reflect off the borders; coverage
/// is anti-aliased with 4x4 supersampling.
SyntheticScene generate_scene(const SyntheticSceneSpec& spec);

struct ClipSamplerSpec {
  int clip_length = 8;
  int frame_stride = 1;
  int crop = 32;

  void validate() const;
  bool operator==(const ClipSamplerSpec&) const = default;
};

/// Frames {s, s + stride, ...} and a crop x crop window at a random offset.
Tensor sample_clip(const Tensor& video, const ClipSamplerSpec& spec, Rng& rng);

/// Synthetic training/evaluation data description.
struct DataSpec {
  SyntheticSceneSpec scene;          // seed is ignored; scenes get derived seeds
  std::vector<TextureMode> textures{TextureMode::kFlat, TextureMode::kGradient, TextureMode::kNoise};
  ClipSamplerSpec sampler;
  std::uint64_t train_seed = 1;
  std::uint64_t eval_seed = 1000003;
  int eval_clips = 16;

  void validate() const;
  bool operator==(const DataSpec&) const = default;
};

/// Fresh scene per sample: clip `index` of the stream seeded by `seed`.
Tensor synthetic_clip(const DataSpec& data, std::uint64_t seed, std::int64_t index);
/// Batch [B, T, H, W, 3] of training clips for `step`.
Tensor synthetic_batch(const DataSpec& data, int batch_size, int step);
/// Held-out clips from the evaluation stream.
std::vector<Tensor> held_out_clips(const DataSpec& data);

/// Stacks equally shaped videos along a new leading axis.
Tensor stack_videos(const std::vector<Tensor>& videos);

DVTK_NAMESPACE_END
