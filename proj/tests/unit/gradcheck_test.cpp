// Built against the double-precision library: analytic gradients are compared
// with central differences, and forward passes with loop-level oracles.
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "dvtk/backbone.hpp"
#include "dvtk/ops.hpp"
#include "dvtk/training.hpp"

using namespace dvtk;

namespace {

static_assert(std::is_same_v<Scalar, double>);

Tensor randn(Shape shape, std::uint64_t seed, double stddev = 1.0, double mean = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(mean, stddev);
  Buffer v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor uniform(Shape shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

// Contracts f's output with a fixed random tensor and compares d/dinput of
// that scalar with central differences, element by element.
void check_gradients(std::vector<Tensor> inputs, const Fn& f, double tol = 1e-6) {
  Tensor probe;
  {
    NoGradGuard g;
    probe = randn(f(inputs).shape(), 99);
  }
  auto scalar = [&](const std::vector<Tensor>& in) { return ops::sum(ops::mul(f(in), probe)); };
  for (auto& x : inputs) x = x.clone().set_requires_grad(true);
  scalar(inputs).backward();
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& x = inputs[i];
    ASSERT_EQ(x.grad().size(), x.values().size()) << "input " << i << " got no gradient";
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    NoGradGuard g;
    for (std::int64_t j = 0; j < x.numel(); ++j) {
      const double saved = x.values()[j];
      x.mutable_values()[j] = saved + h;
      const double up = scalar(inputs).item();
      x.mutable_values()[j] = saved - h;
      const double down = scalar(inputs).item();
      x.mutable_values()[j] = saved;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(analytic[j], numeric, tol * std::max({1.0, std::abs(numeric), std::abs(analytic[j])}))
          << "input " << i << " element " << j;
    }
  }
}

}  // namespace

TEST(Gradcheck, Elementwise) {
  const Tensor a = randn({3, 4}, 1), b = randn({3, 4}, 2);
  check_gradients({a, b}, [](const auto& in) { return ops::add(in[0], in[1]); });
  check_gradients({a, b}, [](const auto& in) { return ops::sub(in[0], in[1]); });
  check_gradients({a, b}, [](const auto& in) { return ops::mul(in[0], in[1]); });
  check_gradients({a, randn({4}, 3)}, [](const auto& in) { return ops::add_broadcast(in[0], in[1]); });
  check_gradients({a, randn({4}, 4)}, [](const auto& in) { return ops::mul_broadcast(in[0], in[1]); });
  check_gradients({a}, [](const auto& in) { return ops::scale(in[0], 1.7); });
  check_gradients({a}, [](const auto& in) { return ops::affine(in[0], -0.3, 2.0); });
  check_gradients({a}, [](const auto& in) { return ops::neg(in[0]); });
}

TEST(Gradcheck, Nonlinearities) {
  // Kink-free region for relu/abs: values kept away from zero.
  Tensor x = randn({2, 5}, 5);
  for (auto& v : x.mutable_values()) v += v > 0 ? 0.1 : -0.1;
  check_gradients({x}, [](const auto& in) { return ops::exp(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::tanh(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::sigmoid(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::silu(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::softplus(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::relu(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::leaky_relu(in[0], 0.2); });
  check_gradients({x}, [](const auto& in) { return ops::abs(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::square(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::clamp(in[0], -0.5, 0.7); });
  check_gradients({uniform({2, 5}, 6, 0.05, 0.95)}, [](const auto& in) { return ops::binary_entropy(in[0]); });
}

TEST(Gradcheck, Reductions) {
  const Tensor x = randn({2, 3, 4}, 7);
  check_gradients({x}, [](const auto& in) { return ops::sum(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::mean(in[0]); });
  check_gradients({x}, [](const auto& in) { return ops::sum_leading(in[0]); });
}

TEST(Gradcheck, LinearWithAndWithoutBias) {
  const Tensor x = randn({2, 3, 4}, 8), w = randn({4, 5}, 9), b = randn({5}, 10);
  check_gradients({x, w, b}, [](const auto& in) { return ops::linear(in[0], in[1], in[2]); });
  check_gradients({x, w}, [](const auto& in) { return ops::linear(in[0], in[1], Tensor()); });
}

TEST(Gradcheck, Layout) {
  const Tensor x = randn({2, 3, 4}, 11), y = randn({2, 2, 4}, 12);
  check_gradients({x}, [](const auto& in) { return ops::reshape(in[0], {6, 4}); });
  check_gradients({x}, [](const auto& in) { return ops::permute(in[0], {2, 0, 1}); });
  check_gradients({x}, [](const auto& in) { return ops::slice(in[0], 1, 1, 3); });
  check_gradients({x, y}, [](const auto& in) { return ops::concat({in[0], in[1]}, 1); });
}

TEST(Gradcheck, PoolAndUpsample) {
  const Tensor x = randn({1, 4, 4, 6, 2}, 13);
  check_gradients({x}, [](const auto& in) { return ops::avg_pool3d(in[0], {2, 2, 3}); });
  check_gradients({randn({1, 2, 2, 3, 2}, 14)},
                  [](const auto& in) { return ops::upsample_nearest3d(in[0], {2, 1, 3}); });
}

TEST(Gradcheck, Conv3d) {
  const ops::ConvGeometry g{{2, 3, 3}, {1, 2, 2}, {1, 1, 1}};
  const Tensor x = randn({2, 3, 5, 4, 2}, 15), w = randn({2 * 3 * 3 * 2, 3}, 16), b = randn({3}, 17);
  check_gradients({x, w, b}, [g](const auto& in) { return ops::conv3d(in[0], in[1], in[2], g); });
}

TEST(Gradcheck, LayerNorm) {
  const Tensor x = randn({3, 6}, 18, 2.0), gamma = randn({6}, 19), beta = randn({6}, 20);
  check_gradients({x, gamma, beta}, [](const auto& in) { return ops::layer_norm(in[0], in[1], in[2]); });
}

TEST(Gradcheck, SelectiveScanBothDirections) {
  const Tensor u = randn({2, 5, 3}, 21), delta = uniform({2, 5, 3}, 22, 0.1, 1.0), a = uniform({3}, 23, -1.5, -0.2);
  const Tensor b = randn({2, 5, 4}, 24), c = randn({2, 5, 4}, 25);
  for (bool reverse : {false, true}) {
    check_gradients({u, delta, a, b, c}, [reverse](const auto& in) {
      return ops::selective_scan(in[0], in[1], in[2], in[3], in[4], reverse);
    });
  }
}

TEST(Gradcheck, Attention) {
  const Tensor q = randn({2, 4, 2, 3}, 26), k = randn({2, 4, 2, 3}, 27), v = randn({2, 4, 2, 3}, 28);
  for (bool causal : {false, true}) {
    check_gradients({q, k, v}, [causal](const auto& in) { return ops::attention(in[0], in[1], in[2], causal); });
  }
}

// The forward value is piecewise constant, so differencing sees zero; the
// contract is the identity Jacobian itself.
TEST(Gradcheck, StraightThroughIsIdentity) {
  Tensor x = randn({3, 2}, 29);
  x.set_requires_grad(true);
  Buffer rounded(x.values().begin(), x.values().end());
  for (auto& v : rounded) v = std::round(v);
  const Tensor probe = randn({3, 2}, 30);
  const Tensor y = ops::straight_through(x, rounded);
  EXPECT_TRUE(std::equal(rounded.begin(), rounded.end(), y.values().begin()));
  ops::sum(ops::mul(y, probe)).backward();
  EXPECT_TRUE(std::equal(probe.values().begin(), probe.values().end(), x.grad().begin()));
}

TEST(Oracle, Conv3dMatchesDirectLoops) {
  const ops::ConvGeometry g{{2, 3, 2}, {2, 1, 2}, {0, 1, 1}};
  const int B = 2, T = 5, H = 4, W = 5, Ci = 3, Co = 2;
  const Tensor x = randn({B, T, H, W, Ci}, 30), w = randn({2 * 3 * 2 * Ci, Co}, 31), b = randn({Co}, 32);
  const Tensor y = ops::conv3d(x, w, b, g);
  const int To = (T + 0 - 2) / 2 + 1, Ho = (H + 2 - 3) / 1 + 1, Wo = (W + 2 - 2) / 2 + 1;
  ASSERT_EQ(y.shape(), (Shape{B, To, Ho, Wo, Co}));
  auto X = [&](int n, int t, int h, int wi, int c) { return x.values()[(((n * T + t) * H + h) * W + wi) * Ci + c]; };
  std::size_t idx = 0;
  for (int n = 0; n < B; ++n)
    for (int t = 0; t < To; ++t)
      for (int h = 0; h < Ho; ++h)
        for (int wo = 0; wo < Wo; ++wo)
          for (int o = 0; o < Co; ++o) {
            double acc = b.values()[o];
            int row = 0;
            for (int dt = 0; dt < 2; ++dt)
              for (int dh = 0; dh < 3; ++dh)
                for (int dw = 0; dw < 2; ++dw)
                  for (int c = 0; c < Ci; ++c, ++row) {
                    const int tt = t * 2 + dt, hh = h - 1 + dh, ww = wo * 2 - 1 + dw;
                    if (hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
                    acc += X(n, tt, hh, ww, c) * w.values()[row * Co + o];
                  }
            EXPECT_NEAR(y.values()[idx++], acc, 1e-12);
          }
}

TEST(Oracle, SelectiveScanMatchesRecurrence) {
  const int S = 2, L = 6, E = 3, N = 4;
  const Tensor u = randn({S, L, E}, 33), delta = uniform({S, L, E}, 34, 0.1, 1.0), a = uniform({E}, 35, -1.0, -0.1);
  const Tensor b = randn({S, L, N}, 36), c = randn({S, L, N}, 37);
  for (bool reverse : {false, true}) {
    const Tensor y = ops::selective_scan(u, delta, a, b, c, reverse);
    for (int s = 0; s < S; ++s)
      for (int e = 0; e < E; ++e) {
        std::vector<double> h(N, 0.0);
        for (int step = 0; step < L; ++step) {
          const int t = reverse ? L - 1 - step : step;
          const double dt = delta.values()[(s * L + t) * E + e];
          double out = 0;
          for (int n = 0; n < N; ++n) {
            h[n] = std::exp(dt * a.values()[e]) * h[n] + dt * u.values()[(s * L + t) * E + e] * b.values()[(s * L + t) * N + n];
            out += c.values()[(s * L + t) * N + n] * h[n];
          }
          EXPECT_NEAR(y.values()[(s * L + t) * E + e], out, 1e-12);
        }
      }
  }
}

TEST(Oracle, AttentionMatchesSoftmaxLoops) {
  const int S = 2, L = 5, H = 2, D = 3;
  const Tensor q = randn({S, L, H, D}, 38), k = randn({S, L, H, D}, 39), v = randn({S, L, H, D}, 40);
  auto at = [&](const Tensor& x, int s, int l, int h, int d) { return x.values()[((s * L + l) * H + h) * D + d]; };
  for (bool causal : {false, true}) {
    const Tensor y = ops::attention(q, k, v, causal);
    for (int s = 0; s < S; ++s)
      for (int h = 0; h < H; ++h)
        for (int i = 0; i < L; ++i) {
          const int last = causal ? i : L - 1;
          std::vector<double> score(last + 1);
          double mx = -1e300, z = 0;
          for (int j = 0; j <= last; ++j) {
            double dot = 0;
            for (int d = 0; d < D; ++d) dot += at(q, s, i, h, d) * at(k, s, j, h, d);
            score[j] = dot / std::sqrt(static_cast<double>(D));
            mx = std::max(mx, score[j]);
          }
          for (auto& sc : score) z += (sc = std::exp(sc - mx));
          for (int d = 0; d < D; ++d) {
            double out = 0;
            for (int j = 0; j <= last; ++j) out += score[j] / z * at(v, s, j, h, d);
            EXPECT_NEAR(at(y, s, i, h, d), out, 1e-12);
          }
        }
  }
}

TEST(Oracle, LayerNormMatchesDirectFormula) {
  const Tensor x = randn({4, 5}, 41, 3.0), gamma = randn({5}, 42), beta = randn({5}, 43);
  const Tensor y = ops::layer_norm(x, gamma, beta);
  for (int r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (int c = 0; c < 5; ++c) mu += x.values()[r * 5 + c] / 5;
    for (int c = 0; c < 5; ++c) var += std::pow(x.values()[r * 5 + c] - mu, 2) / 5;
    for (int c = 0; c < 5; ++c) {
      const double want = (x.values()[r * 5 + c] - mu) / std::sqrt(var + 1e-5) * gamma.values()[c] + beta.values()[c];
      EXPECT_NEAR(y.values()[r * 5 + c], want, 1e-12);
    }
  }
}

namespace {

TokenizerConfig toy_config(QuantizerSpec quantizer, int latent) {
  TokenizerConfig cfg;
  cfg.kernels = {{1, 2, 2}, {2, 2, 2}};
  cfg.hidden_dims = {8, 8};
  cfg.latent_channels = latent;
  cfg.state_dim = 4;
  cfg.layers_per_block = 1;
  cfg.quantizer = std::move(quantizer);
  return cfg;
}

}  // namespace

// Parameters downstream of the quantizer see the true loss surface, so the
// full tokenizer objective (GAN term included) can be differenced directly.
TEST(Gradcheck, TokenizerObjectiveOnDecoderParameters) {
  for (const QuantizerSpec& q : {QuantizerSpec{LfqSpec{4}}, QuantizerSpec{FsqSpec{{5, 3}}}}) {
    Tokenizer model(toy_config(q, required_channels(q)), 3);
    TrainConfig train;
    train.gan_start_step = 0;
    Trainer trainer(model, train, LossWeights{}, DiscriminatorConfig{4, 1, {3, 4, 4}});
    const Tensor batch = ops::tanh(randn({2, 2, 8, 8, 3}, 44));
    trainer.generator_objective(batch, 0).total.backward();

    ParamList decoder;
    for (const auto& [name, p] : model.parameters()) {
      if (name.rfind("decoder.", 0) == 0) decoder.emplace_back(name, p);
    }
    ASSERT_FALSE(decoder.empty());
    std::mt19937_64 rng(5);
    NoGradGuard g;
    for (int probe = 0; probe < 32; ++probe) {
      auto& [name, p] = decoder[rng() % decoder.size()];
      const std::int64_t j = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(p.numel()));
      const double analytic = p.grad().empty() ? 0.0 : p.grad()[j];
      const double saved = p.values()[j], h = 1e-6;
      p.mutable_values()[j] = saved + h;
      const double up = trainer.generator_objective(batch, 0).total.item();
      p.mutable_values()[j] = saved - h;
      const double down = trainer.generator_objective(batch, 0).total.item();
      p.mutable_values()[j] = saved;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(analytic, numeric, 1e-3 * std::max({1e-6, std::abs(numeric), std::abs(analytic)})) << name << "[" << j << "]";
    }
  }
}
