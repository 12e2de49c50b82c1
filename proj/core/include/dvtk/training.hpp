#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dvtk/backbone.hpp"

DVTK_NAMESPACE_BEGIN

struct LossWeights {
  double recon = 1.0;
  double perceptual = 1.0;
  double gan = 0.1;
  double entropy = 0.1;
  double commitment = 0.25;
  bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
  int total_steps = 2000;
  int gan_start_step = 1000;
  double learning_rate = 1e-4;
  int batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int clip_length = 8;
  int frame_stride = 1;
  std::uint64_t seed = 0;
  int checkpoint_interval = 500;
  int log_interval = 10;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct DiscriminatorConfig {
  int base_channels = 16;
  int stages = 2;                   // each halves H and W
  std::array<int, 3> patch{3, 4, 4};  // per-stage kernel (t, h, w)

  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

Tensor recon_loss(const Tensor& video, const Tensor& recon);

/// Maps a batch of single frames [B, 1, H, W, C] to one or more feature maps.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Tensor> features(const Tensor& frames) const = 0;
};

/// Frozen, randomly initialised convolutional pyramid.
class RandomConvPyramid final : public FeatureExtractor {
 public:
  explicit RandomConvPyramid(std::uint64_t seed = 7, int in_channels = 3);
  std::vector<Tensor> features(const Tensor& frames) const override;

 private:
  std::vector<Conv3d> stages_;
};

/// Mean over frames of the mean over feature maps of the squared feature
/// distance. Extractor failures surface as adapter errors naming the frame.
Tensor perceptual_loss(const Tensor& video, const Tensor& recon, const FeatureExtractor& extractor);

/// 3D PatchGAN: strided convolutions with leaky ReLU and a 1x1x1 logit head.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, int in_channels, std::uint64_t seed);

  /// [B, T, H, W, C] -> [B, T, H / 2^stages, W / 2^stages, 1].
  Tensor operator()(const Tensor& video) const;
  ParamList parameters() const;
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  std::vector<Conv3d> stages_;
  Conv3d head_;
};

struct GanLosses {
  Tensor generator;
  Tensor discriminator;
};

/// Hinge losses on patch logit maps of equal shape.
GanLosses gan_losses(const Tensor& real_logits, const Tensor& fake_logits);

class Adam {
 public:
  Adam(ParamList params, double lr, double beta1, double beta2, double eps = 1e-8);

  void zero_grad();
  /// Parameters without a gradient are left unchanged.
  void step();

  std::int64_t steps_taken() const { return t_; }
  const ParamList& params() const { return params_; }
  std::vector<std::vector<Scalar>>& first_moment() { return m_; }
  std::vector<std::vector<Scalar>>& second_moment() { return v_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  ParamList params_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<Scalar>> m_, v_;
};

/// Named loss values of one step, in double precision.
using LossReport = std::map<std::string, double>;

class Trainer {
 public:
  Trainer(Tokenizer& model, const TrainConfig& train, const LossWeights& weights, const DiscriminatorConfig& disc,
          std::shared_ptr<const FeatureExtractor> extractor = nullptr);

  struct Objective {
    Tensor total;
    LossReport report;
    Tensor reconstruction;
  };
  /// Tokenizer-side loss of `batch` at `step`, with its graph intact and no
  /// parameter update.
  Objective generator_objective(const Tensor& batch, int step);

  /// One optimisation step on `batch` [B, T, H, W, C]. Returns total,
  /// recon, perceptual, gan, disc and, for LFQ quantizers, entropy and
  /// commitment.
  LossReport train_step(const Tensor& batch, int step);

  Tokenizer& model() { return model_; }
  Discriminator& discriminator() { return disc_; }
  Adam& model_optimizer() { return opt_g_; }
  Adam& discriminator_optimizer() { return opt_d_; }
  const TrainConfig& train_config() const { return train_; }

 private:
  Tokenizer& model_;
  TrainConfig train_;
  LossWeights weights_;
  Discriminator disc_;
  std::shared_ptr<const FeatureExtractor> extractor_;
  Adam opt_g_;
  Adam opt_d_;
};

/// Source of training batches; called once per step with the step index.
using BatchSource = std::function<Tensor(int step)>;

struct FitOptions {
  std::filesystem::path out_dir;   // receives loss_log.jsonl and checkpoints
  int start_step = 0;              // > 0 when resuming
  /// Serialises a checkpoint; called at checkpoint_interval and at the end.
  std::function<void(Trainer&, int step, const std::filesystem::path&)> save_checkpoint;
  std::function<void(int step, const LossReport&)> on_log;
};

struct FitResult {
  std::vector<std::pair<int, LossReport>> log;
  std::filesystem::path last_checkpoint;
};

/// Runs train_step from start_step to total_steps. One log row is written
/// for each step divisible by log_interval.
FitResult fit(Trainer& trainer, const BatchSource& source, const FitOptions& options);

DVTK_NAMESPACE_END
