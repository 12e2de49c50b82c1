#include "dvtk/data.hpp"

#include <algorithm>
#include <cmath>

DVTK_NAMESPACE_BEGIN

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kSuper = 4;  // supersamples per axis

using Color = std::array<double, 3>;

struct Texture {
  TextureMode mode = TextureMode::kFlat;
  Color base{}, alt{};
  double angle = 0;              // gradient direction
  int noise_size = 0;
  std::vector<double> noise;     // noise_size^2 offsets
};

Texture make_texture(TextureMode mode, std::mt19937_64& rng, int noise_size) {
  std::uniform_real_distribution<double> col(-0.85, 0.85), ang(0, 2 * kPi), amp(-0.15, 0.15);
  Texture t;
  t.mode = mode;
  for (auto& c : t.base) c = col(rng);
  for (auto& c : t.alt) c = col(rng);
  t.angle = ang(rng);
  if (mode == TextureMode::kNoise) {
    t.noise_size = noise_size;
    t.noise.resize(static_cast<std::size_t>(noise_size) * noise_size);
    for (auto& v : t.noise) v = amp(rng);
  }
  return t;
}

// (u, v) are texture coordinates normalised to [0, 1].
Color shade(const Texture& t, double u, double v) {
  switch (t.mode) {
    case TextureMode::kFlat:
      return t.base;
    case TextureMode::kGradient: {
      const double s = 0.5 + 0.5 * ((u - 0.5) * std::cos(t.angle) + (v - 0.5) * std::sin(t.angle)) * std::sqrt(2.0);
      const double w = std::clamp(s, 0.0, 1.0);
      return {t.base[0] + (t.alt[0] - t.base[0]) * w, t.base[1] + (t.alt[1] - t.base[1]) * w,
              t.base[2] + (t.alt[2] - t.base[2]) * w};
    }
    case TextureMode::kNoise: {
      const int n = t.noise_size;
      const int i = std::clamp(static_cast<int>(u * n), 0, n - 1);
      const int j = std::clamp(static_cast<int>(v * n), 0, n - 1);
      const double d = t.noise[static_cast<std::size_t>(i) * n + j];
      return {t.base[0] + d, t.base[1] + d, t.base[2] + d};
    }
  }
  return t.base;
}

struct Object {
  bool disc = true;
  double radius = 4;  // half extent for boxes
  double r = 0, c = 0;
  double vr = 0, vc = 0;
  Texture texture;
};

// Advances one coordinate by `step`, reflecting inside [lo, hi].
void advance(double& x, double& v, double lo, double hi) {
  x += v;
  for (int guard = 0; guard < 8 && (x < lo || x > hi); ++guard) {
    if (x < lo) {
      x = 2 * lo - x;
      v = -v;
    }
    if (x > hi) {
      x = 2 * hi - x;
      v = -v;
    }
  }
  x = std::clamp(x, lo, hi);
}

}  // namespace

const char* texture_name(TextureMode mode) {
  switch (mode) {
    case TextureMode::kFlat:
      return "flat";
    case TextureMode::kGradient:
      return "gradient";
    case TextureMode::kNoise:
      return "noise";
  }
  return "flat";
}

TextureMode parse_texture(const std::string& name) {
  if (name == "flat") return TextureMode::kFlat;
  if (name == "gradient") return TextureMode::kGradient;
  if (name == "noise") return TextureMode::kNoise;
  fail(ErrorKind::kConfig, "unknown texture mode '" + name + "' (expected flat, gradient or noise)");
}

void SyntheticSceneSpec::validate() const {
  if (height < 4 || width < 4) fail(ErrorKind::kConfig, "scene height and width must be >= 4");
  if (frames < 1) fail(ErrorKind::kConfig, "scene frames must be >= 1");
  if (objects < 0) fail(ErrorKind::kConfig, "scene objects must be >= 0");
  if (!(motion >= 0) || !std::isfinite(motion)) fail(ErrorKind::kConfig, "scene motion must be a finite value >= 0");
}

SyntheticScene generate_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int H = spec.height, W = spec.width, T = spec.frames;
  std::uniform_real_distribution<double> unit(0, 1);
  const Texture background = make_texture(spec.texture, rng, std::max(H, W) / 2);
  std::vector<Object> objects(static_cast<std::size_t>(spec.objects));
  const double min_side = std::min(H, W);
  for (auto& o : objects) {
    o.disc = unit(rng) < 0.5;
    o.radius = min_side * (0.08 + 0.12 * unit(rng));
    o.r = o.radius + unit(rng) * (H - 2 * o.radius);
    o.c = o.radius + unit(rng) * (W - 2 * o.radius);
    const double dir = 2 * kPi * unit(rng);
    o.vr = spec.motion * std::sin(dir);
    o.vc = spec.motion * std::cos(dir);
    o.texture = make_texture(spec.texture, rng, 6);
  }

  SyntheticScene scene;
  scene.centers.resize(static_cast<std::size_t>(T));
  Buffer pixels(static_cast<std::size_t>(T) * H * W * 3);
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      for (auto& o : objects) {
        advance(o.r, o.vr, o.radius, H - o.radius);
        advance(o.c, o.vc, o.radius, W - o.radius);
      }
    }
    for (const auto& o : objects) scene.centers[t].push_back({o.r, o.c});
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        Color acc{0, 0, 0};
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const double py = y + (sy + 0.5) / kSuper;
            const double px = x + (sx + 0.5) / kSuper;
            Color c = shade(background, py / H, px / W);
            // Later objects are drawn on top.
            for (const auto& o : objects) {
              const double dy = py - o.r, dx = px - o.c;
              const bool inside = o.disc ? dy * dy + dx * dx <= o.radius * o.radius
                                         : std::abs(dy) <= o.radius && std::abs(dx) <= o.radius;
              if (inside) c = shade(o.texture, (dy / o.radius + 1) / 2, (dx / o.radius + 1) / 2);
            }
            for (int k = 0; k < 3; ++k) acc[k] += c[k];
          }
        }
        const std::size_t base = ((static_cast<std::size_t>(t) * H + y) * W + x) * 3;
        for (int k = 0; k < 3; ++k) {
          pixels[base + k] = static_cast<Scalar>(std::clamp(acc[k] / (kSuper * kSuper), -1.0, 1.0));
        }
      }
    }
  }
  scene.video = Tensor({T, H, W, 3}, std::move(pixels));
  return scene;
}

void ClipSamplerSpec::validate() const {
  if (clip_length < 1) fail(ErrorKind::kConfig, "sampler.clip_length must be >= 1");
  if (frame_stride < 1) fail(ErrorKind::kConfig, "sampler.frame_stride must be >= 1");
  if (crop < 1) fail(ErrorKind::kConfig, "sampler.crop must be >= 1");
}

Tensor sample_clip(const Tensor& video, const ClipSamplerSpec& spec, Rng& rng) {
  spec.validate();
  if (video.rank() != 4) fail(ErrorKind::kShape, "sample_clip expects [T, H, W, C], got " + shape_str(video.shape()));
  const int T = video.dim(0), H = video.dim(1), W = video.dim(2), C = video.dim(3);
  const int span = (spec.clip_length - 1) * spec.frame_stride + 1;
  if (span > T) {
    fail(ErrorKind::kData, "video has " + std::to_string(T) + " frames, clip needs " + std::to_string(span) +
                               " (length " + std::to_string(spec.clip_length) + ", stride " +
                               std::to_string(spec.frame_stride) + ")");
  }
  if (spec.crop > H || spec.crop > W) {
    fail(ErrorKind::kData, "crop " + std::to_string(spec.crop) + " exceeds frame " + std::to_string(H) + "x" +
                               std::to_string(W));
  }
  auto pick = [&](int n) { return n <= 0 ? 0 : static_cast<int>(rng() % static_cast<std::uint64_t>(n + 1)); };
  const int t0 = pick(T - span);
  const int y0 = pick(H - spec.crop);
  const int x0 = pick(W - spec.crop);
  const int S = spec.crop;
  Buffer out(static_cast<std::size_t>(spec.clip_length) * S * S * C);
  const auto src = video.values();
  std::size_t o = 0;
  for (int i = 0; i < spec.clip_length; ++i) {
    const int t = t0 + i * spec.frame_stride;
    for (int y = 0; y < S; ++y) {
      const std::size_t row = ((static_cast<std::size_t>(t) * H + y0 + y) * W + x0) * C;
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(row), static_cast<std::size_t>(S) * C, out.begin() + o);
      o += static_cast<std::size_t>(S) * C;
    }
  }
  return Tensor({spec.clip_length, S, S, C}, std::move(out));
}

void DataSpec::validate() const {
  scene.validate();
  sampler.validate();
  if (textures.empty()) fail(ErrorKind::kConfig, "data.textures must list at least one texture mode");
  if (eval_clips < 1) fail(ErrorKind::kConfig, "data.eval_clips must be >= 1");
  const int span = (sampler.clip_length - 1) * sampler.frame_stride + 1;
  if (span > scene.frames) {
    fail(ErrorKind::kConfig, "data.scene.frames (" + std::to_string(scene.frames) + ") shorter than the sampled span " +
                                 std::to_string(span));
  }
  if (sampler.crop > scene.height || sampler.crop > scene.width) {
    fail(ErrorKind::kConfig, "data.sampler.crop exceeds the scene resolution");
  }
}

Tensor synthetic_clip(const DataSpec& data, std::uint64_t seed, std::int64_t index) {
  // SplitMix-style mixing keeps per-sample seeds decorrelated.
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(index) + 1;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  SyntheticSceneSpec spec = data.scene;
  spec.seed = z;
  spec.texture = data.textures[static_cast<std::size_t>(index) % data.textures.size()];
  Rng rng(z ^ 0x5bd1e995ULL);
  return sample_clip(generate_scene(spec).video, data.sampler, rng);
}

Tensor synthetic_batch(const DataSpec& data, int batch_size, int step) {
  std::vector<Tensor> clips;
  for (int b = 0; b < batch_size; ++b) {
    clips.push_back(synthetic_clip(data, data.train_seed, static_cast<std::int64_t>(step) * batch_size + b));
  }
  return stack_videos(clips);
}

std::vector<Tensor> held_out_clips(const DataSpec& data) {
  std::vector<Tensor> clips;
  for (int i = 0; i < data.eval_clips; ++i) clips.push_back(synthetic_clip(data, data.eval_seed, i));
  return clips;
}

Tensor stack_videos(const std::vector<Tensor>& videos) {
  if (videos.empty()) fail(ErrorKind::kShape, "stack_videos: no videos");
  Shape shape = videos.front().shape();
  Buffer out;
  out.reserve(static_cast<std::size_t>(videos.front().numel()) * videos.size());
  for (const auto& v : videos) {
    if (v.shape() != shape) fail(ErrorKind::kShape, "stack_videos: shapes differ");
    out.insert(out.end(), v.values().begin(), v.values().end());
  }
  shape.insert(shape.begin(), static_cast<int>(videos.size()));
  return Tensor(std::move(shape), std::move(out));
}

DVTK_NAMESPACE_END
