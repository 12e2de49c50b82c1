#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "dvtk/data.hpp"
#include "dvtk/metrics.hpp"

using namespace dvtk;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Scalar>(u(rng));
  return Tensor(std::move(shape), std::move(v));
}

std::vector<Scalar> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void expect_error(ErrorKind kind, const std::function<void()>& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << error_kind_name(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

// Frame t of a [T, H, W, C] volume as a flat vector.
std::vector<Scalar> frame(const Tensor& v, int t) {
  const std::int64_t per = v.numel() / v.dim(0);
  return {v.values().begin() + t * per, v.values().begin() + (t + 1) * per};
}

// Windowed statistics computed directly per pixel: a 2D Gaussian truncated
// to the frame and renormalised over the pixels it covers.
double ssim_oracle(const Tensor& a, const Tensor& b) {
  const int T = a.dim(0), H = a.dim(1), W = a.dim(2), C = a.dim(3);
  const double c1 = std::pow(0.01 * 2, 2), c2 = std::pow(0.03 * 2, 2);
  double total = 0;
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      auto at = [&](const Tensor& x, int y, int xx) { return static_cast<double>(x.values()[((t * H + y) * W + xx) * C + c]); };
      double plane = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double wsum = 0, ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
          for (int dy = -5; dy <= 5; ++dy)
            for (int dx = -5; dx <= 5; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              const double w = std::exp(-(dy * dy + dx * dx) / (2 * 1.5 * 1.5));
              const double va = at(a, yy, xx), vb = at(b, yy, xx);
              wsum += w;
              ma += w * va;
              mb += w * vb;
              saa += w * va * va;
              sbb += w * vb * vb;
              sab += w * va * vb;
            }
          ma /= wsum;
          mb /= wsum;
          const double va = saa / wsum - ma * ma, vb = sbb / wsum - mb * mb, cov = sab / wsum - ma * mb;
          plane += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
      total += plane / (H * W);
    }
  return total / (T * C);
}

}  // namespace

TEST(Scene, DeterministicAndInRange) {
  for (TextureMode mode : {TextureMode::kFlat, TextureMode::kGradient, TextureMode::kNoise}) {
    SyntheticSceneSpec spec;
    spec.frames = 4;
    spec.texture = mode;
    spec.seed = 11;
    const auto a = generate_scene(spec), b = generate_scene(spec);
    EXPECT_EQ(vals(a.video), vals(b.video)) << texture_name(mode);
    EXPECT_EQ(a.video.shape(), (Shape{4, 32, 32, 3}));
    for (Scalar v : a.video.values()) {
      ASSERT_GE(v, -1);
      ASSERT_LE(v, 1);
    }
    spec.seed = 12;
    EXPECT_NE(vals(generate_scene(spec).video), vals(a.video));
  }
}

TEST(Scene, ZeroMotionFreezesFrames) {
  SyntheticSceneSpec spec;
  spec.frames = 5;
  spec.motion = 0;
  spec.seed = 3;
  const Tensor v = generate_scene(spec).video;
  for (int t = 1; t < 5; ++t) EXPECT_EQ(frame(v, t), frame(v, 0));
}

// Tracks a single flat object through its coverage-weighted centroid, using
// the empty scene of the same seed as the background plate. Coverage comes
// from a 4x4 sample grid (spacing 1/4 px), so a measured centroid is within
// 1/8 px of the true one and a measured step within 1/4 px of the true step.
TEST(Scene, CentroidDisplacementBoundedByMotion) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    SyntheticSceneSpec spec;
    spec.height = 40;
    spec.width = 48;
    spec.frames = 24;
    spec.objects = 1;
    spec.motion = 1.5;
    spec.texture = TextureMode::kFlat;
    spec.seed = seed;
    const SyntheticScene scene = generate_scene(spec);
    spec.objects = 0;
    const Tensor plate = generate_scene(spec).video;
    const int H = spec.height, W = spec.width;
    std::vector<std::array<double, 2>> centroid;
    for (int t = 0; t < spec.frames; ++t) {
      std::vector<double> diff(static_cast<std::size_t>(H) * W);
      double peak = 0;
      for (int p = 0; p < H * W; ++p) {
        for (int k = 0; k < 3; ++k) {
          const std::size_t i = (static_cast<std::size_t>(t) * H * W + p) * 3 + k;
          diff[p] += std::abs(scene.video.values()[i] - plate.values()[i]);
        }
        peak = std::max(peak, diff[p]);
      }
      ASSERT_GT(peak, 0.05) << "object indistinguishable from background, seed " << seed;
      double sw = 0, sy = 0, sx = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double w = diff[y * W + x] / peak;
          sw += w;
          sy += w * (y + 0.5);
          sx += w * (x + 0.5);
        }
      centroid.push_back({sy / sw, sx / sw});
      EXPECT_NEAR(centroid.back()[0], scene.centers[t][0][0], 0.125 + 1e-6);
      EXPECT_NEAR(centroid.back()[1], scene.centers[t][0][1], 0.125 + 1e-6);
    }
    for (int t = 1; t < spec.frames; ++t) {
      const double d = std::hypot(centroid[t][0] - centroid[t - 1][0], centroid[t][1] - centroid[t - 1][1]);
      EXPECT_LE(d, spec.motion + 0.25 + 1e-6) << "seed " << seed << " frame " << t;
      const auto& a = scene.centers[t - 1][0];
      const auto& b = scene.centers[t][0];
      EXPECT_LE(std::hypot(b[0] - a[0], b[1] - a[1]), spec.motion + 1e-9);
    }
  }
}

TEST(Scene, InvalidSpecIsConfigError) {
  SyntheticSceneSpec spec;
  spec.motion = -1;
  expect_error(ErrorKind::kConfig, [&] { generate_scene(spec); });
  expect_error(ErrorKind::kConfig, [] { parse_texture("plaid"); });
}

TEST(Sampler, IdentityWindowAndStride) {
  SyntheticSceneSpec spec;
  spec.frames = 16;
  spec.seed = 7;
  const Tensor v = generate_scene(spec).video;
  Rng rng(1);
  EXPECT_EQ(vals(sample_clip(v, {16, 1, 32}, rng)), vals(v));

  for (int trial = 0; trial < 10; ++trial) {
    const Tensor clip = sample_clip(v, {4, 2, 32}, rng);
    ASSERT_EQ(clip.shape(), (Shape{4, 32, 32, 3}));
    int start = -1;
    for (int i = 0; i + 6 < 16 && start < 0; ++i) {
      bool all = true;
      for (int k = 0; k < 4; ++k) all = all && frame(clip, k) == frame(v, i + 2 * k);
      if (all) start = i;
    }
    EXPECT_GE(start, 0) << "clip is not frames {i, i+2, i+4, i+6}";
  }
}

TEST(Sampler, CropsAreSubArrays) {
  const Tensor v = uniform({6, 10, 12, 3}, 8);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor clip = sample_clip(v, {3, 1, 5}, rng);
    ASSERT_EQ(clip.shape(), (Shape{3, 5, 5, 3}));
    bool found = false;
    for (int t0 = 0; t0 + 3 <= 6 && !found; ++t0)
      for (int y0 = 0; y0 + 5 <= 10 && !found; ++y0)
        for (int x0 = 0; x0 + 5 <= 12 && !found; ++x0) {
          bool same = true;
          for (int t = 0; t < 3 && same; ++t)
            for (int y = 0; y < 5 && same; ++y)
              for (int x = 0; x < 5 && same; ++x)
                for (int c = 0; c < 3 && same; ++c) {
                  same = clip.values()[((t * 5 + y) * 5 + x) * 3 + c] ==
                         v.values()[(((t0 + t) * 10 + y0 + y) * 12 + x0 + x) * 3 + c];
                }
          found = same;
        }
    EXPECT_TRUE(found);
  }
}

TEST(Sampler, TooShortOrSmallIsDataError) {
  const Tensor v = uniform({6, 8, 8, 3}, 9);
  Rng rng(3);
  expect_error(ErrorKind::kData, [&] { sample_clip(v, {4, 2, 8}, rng); });
  expect_error(ErrorKind::kData, [&] { sample_clip(v, {2, 1, 9}, rng); });
}

TEST(SyntheticData, BatchesAreReproducibleAndHeldOutDiffers) {
  DataSpec data;
  data.scene.frames = 8;
  data.eval_clips = 3;
  const Tensor a = synthetic_batch(data, 2, 5), b = synthetic_batch(data, 2, 5);
  EXPECT_EQ(a.shape(), (Shape{2, 8, 32, 32, 3}));
  EXPECT_EQ(vals(a), vals(b));
  EXPECT_NE(vals(a), vals(synthetic_batch(data, 2, 6)));
  const auto held = held_out_clips(data);
  ASSERT_EQ(held.size(), 3u);
  EXPECT_EQ(vals(held[0]), vals(held_out_clips(data)[0]));
  EXPECT_NE(vals(held[0]), vals(synthetic_clip(data, data.train_seed, 0)));
}

TEST(Psnr, AnchorsAndSymmetry) {
  const Tensor a = uniform({2, 4, 4, 3}, 10, -0.7, 0.7);
  EXPECT_NEAR(psnr(a, ops::affine(a, 1, Scalar(0.2))), 20.0, 0.01);
  EXPECT_EQ(psnr(a, a), kPsnrCapDb);
  const Tensor b = uniform({2, 4, 4, 3}, 11);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  expect_error(ErrorKind::kConfig, [&] { psnr(a, uniform({2, 4, 4, 1}, 1)); });
}

TEST(Psnr, DecreasesWithNoiseVariance) {
  const Tensor a = uniform({2, 8, 8, 3}, 12, -0.5, 0.5);
  const Tensor noise = uniform({2, 8, 8, 3}, 13);
  double prev = kPsnrCapDb;
  for (double s : {0.01, 0.03, 0.1, 0.3}) {
    const double p = psnr(a, ops::add(a, ops::scale(noise, static_cast<Scalar>(s))));
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Ssim, MatchesWindowedOracle) {
  for (std::uint64_t seed : {14u, 15u, 16u}) {
    const Tensor a = uniform({2, 8, 8, 3}, seed), b = ops::add(a, ops::scale(uniform({2, 8, 8, 3}, seed + 10), 0.3f));
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-6);
  }
  const Tensor wide = uniform({1, 13, 17, 2}, 17), other = uniform({1, 13, 17, 2}, 18);
  EXPECT_NEAR(ssim(wide, other), ssim_oracle(wide, other), 1e-6);
}

TEST(Ssim, IdentityNegationAndSymmetry) {
  const Tensor a = uniform({2, 16, 16, 3}, 19), b = uniform({2, 16, 16, 3}, 20);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
  // Local means of random noise are far from zero (m^2 >> C1), which flips the
  // luminance term; a checkerboard keeps windowed means near zero.
  Buffer board(64 * 64 * 3);
  for (std::size_t i = 0; i < board.size(); ++i) board[i] = ((i / 3) % 64 + (i / 3) / 64) % 2 ? 0.5f : -0.5f;
  const Tensor checker({1, 64, 64, 3}, board);
  EXPECT_LT(ssim(checker, ops::neg(checker)), -0.9);
  EXPECT_EQ(ssim(a, b), ssim(b, a));
  expect_error(ErrorKind::kConfig, [&] { ssim(a, uniform({2, 16, 8, 3}, 1)); });
}

TEST(MetricsTable, RowsAggregateAndCsv) {
  std::vector<Tensor> refs, recons;
  std::vector<TokenGrid> grids;
  for (int i = 0; i < 3; ++i) {
    refs.push_back(uniform({2, 8, 8, 3}, 30 + i));
    recons.push_back(ops::add(refs.back(), ops::scale(uniform({2, 8, 8, 3}, 40 + i), 0.1f * (i + 1))));
    TokenGrid g;
    g.dims = {1, 2, 2};
    g.quantizer = LfqSpec{2};
    g.codes = {0, 1, 2, static_cast<std::uint32_t>(i % 4)};
    grids.push_back(g);
  }
  const MetricsTable self = metrics_table(recons, recons, grids);
  for (const auto& r : self.rows) {
    EXPECT_EQ(r.psnr_db, kPsnrCapDb);
    EXPECT_NEAR(r.ssim, 1.0, 1e-9);
  }
  const MetricsTable t = metrics_table(refs, recons, grids);
  ASSERT_EQ(t.rows.size(), 3u);
  double mp = 0, ms = 0;
  for (const auto& r : t.rows) {
    mp += r.psnr_db / 3;
    ms += r.ssim / 3;
    EXPECT_EQ(r.tokens, 4);
  }
  EXPECT_NEAR(t.aggregate.psnr_db, mp, 1e-9);
  EXPECT_NEAR(t.aggregate.ssim, ms, 1e-9);
  EXPECT_DOUBLE_EQ(t.rows[0].codebook_usage_fraction, 3.0 / 4);

  std::ostringstream csv;
  t.write_csv(csv);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "clip_id,psnr_db,ssim,tokens,codebook_usage_fraction,perplexity");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(Evaluate, RequiresEvaluationModeAndIsDeterministic) {
  TokenizerConfig cfg;
  cfg.kernels = {{2, 2, 2}, {1, 2, 2}};
  cfg.hidden_dims = {8, 8};
  cfg.quantizer = ChannelSplitSpec{FsqSpec{{5, 3}}, 2};
  cfg.latent_channels = 4;
  cfg.state_dim = 4;
  cfg.layers_per_block = 1;
  Tokenizer model(cfg, 1);
  const std::vector<Tensor> clips = {uniform({4, 8, 8, 3}, 50), uniform({4, 8, 8, 3}, 51)};
  model.set_training(true);
  expect_error(ErrorKind::kConfig, [&] { evaluate(model, clips); });
  model.set_training(false);
  const MetricsTable a = evaluate(model, clips), b = evaluate(model, clips);
  ASSERT_EQ(a.rows.size(), 2u);
  EXPECT_EQ(a.aggregate.psnr_db, b.aggregate.psnr_db);
  EXPECT_EQ(a.rows[1].ssim, b.rows[1].ssim);
  EXPECT_EQ(a.rows[0].tokens, 2 * 4 * 2);
}
