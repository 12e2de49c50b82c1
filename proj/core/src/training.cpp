#include "dvtk/training.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

DVTK_NAMESPACE_BEGIN

void TrainConfig::validate() const {
  if (total_steps < 1) fail(ErrorKind::kConfig, "train.total_steps must be >= 1");
  if (gan_start_step < 0 || gan_start_step > total_steps) {
    fail(ErrorKind::kConfig, "train.gan_start_step must be in [0, total_steps]");
  }
  if (!(learning_rate > 0)) fail(ErrorKind::kConfig, "train.learning_rate must be positive");
  if (batch_size < 1) fail(ErrorKind::kConfig, "train.batch_size must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail(ErrorKind::kConfig, "train.betas must lie in [0, 1)");
  if (clip_length < 1) fail(ErrorKind::kConfig, "train.clip_length must be >= 1");
  if (frame_stride < 1) fail(ErrorKind::kConfig, "train.frame_stride must be >= 1");
  if (checkpoint_interval < 1) fail(ErrorKind::kConfig, "train.checkpoint_interval must be >= 1");
  if (log_interval < 1) fail(ErrorKind::kConfig, "train.log_interval must be >= 1");
}

void DiscriminatorConfig::validate() const {
  if (base_channels < 1) fail(ErrorKind::kConfig, "discriminator.base_channels must be >= 1");
  if (stages < 1) fail(ErrorKind::kConfig, "discriminator.stages must be >= 1");
  if (patch[0] < 1 || patch[0] % 2 == 0) fail(ErrorKind::kConfig, "discriminator.patch temporal extent must be odd");
  if (patch[1] != 4 || patch[2] != 4) fail(ErrorKind::kConfig, "discriminator.patch spatial extent must be 4");
}

Tensor recon_loss(const Tensor& video, const Tensor& recon) {
  if (video.shape() != recon.shape()) {
    fail(ErrorKind::kConfig, "recon_loss: shapes differ " + shape_str(video.shape()) + " vs " + shape_str(recon.shape()));
  }
  return ops::mean(ops::abs(ops::sub(video, recon)));
}

RandomConvPyramid::RandomConvPyramid(std::uint64_t seed, int in_channels) {
  Rng rng(seed);
  const int widths[] = {8, 16, 16};
  const int strides[] = {1, 2, 2};
  int in = in_channels;
  for (int i = 0; i < 3; ++i) {
    ops::ConvGeometry g;
    g.kernel = {1, 3, 3};
    g.stride = {1, strides[i], strides[i]};
    g.padding = {0, 1, 1};
    stages_.emplace_back(in, widths[i], g, rng, false);
    in = widths[i];
  }
}

std::vector<Tensor> RandomConvPyramid::features(const Tensor& frames) const {
  std::vector<Tensor> out;
  Tensor x = frames;
  for (const auto& stage : stages_) {
    x = ops::relu(stage(x));
    out.push_back(x);
  }
  return out;
}

Tensor perceptual_loss(const Tensor& video, const Tensor& recon, const FeatureExtractor& extractor) {
  if (video.shape() != recon.shape()) {
    fail(ErrorKind::kConfig, "perceptual_loss: shapes differ " + shape_str(video.shape()) + " vs " +
                                 shape_str(recon.shape()));
  }
  if (video.rank() != 5) fail(ErrorKind::kShape, "perceptual_loss expects [B, T, H, W, C]");
  const int T = video.dim(1);
  Tensor total;
  for (int t = 0; t < T; ++t) {
    std::vector<Tensor> fa, fb;
    try {
      fa = extractor.features(ops::slice(video, 1, t, t + 1));
      fb = extractor.features(ops::slice(recon, 1, t, t + 1));
    } catch (const std::exception& e) {
      fail(ErrorKind::kAdapter, "feature extractor failed on frame " + std::to_string(t) + ": " + e.what());
    }
    if (fa.empty() || fa.size() != fb.size()) {
      fail(ErrorKind::kAdapter, "feature extractor returned inconsistent feature lists on frame " + std::to_string(t));
    }
    Tensor frame;
    for (std::size_t i = 0; i < fa.size(); ++i) {
      if (fa[i].shape() != fb[i].shape()) {
        fail(ErrorKind::kAdapter, "feature extractor returned mismatched shapes on frame " + std::to_string(t));
      }
      const Tensor d = ops::mean(ops::square(ops::sub(fa[i], fb[i])));
      frame = frame.defined() ? ops::add(frame, d) : d;
    }
    frame = ops::scale(frame, Scalar(1) / static_cast<Scalar>(fa.size()));
    total = total.defined() ? ops::add(total, frame) : frame;
  }
  return ops::scale(total, Scalar(1) / static_cast<Scalar>(T));
}

Discriminator::Discriminator(const DiscriminatorConfig& config, int in_channels, std::uint64_t seed) : config_(config) {
  config.validate();
  Rng rng(seed);
  int in = in_channels;
  for (int s = 0; s < config.stages; ++s) {
    ops::ConvGeometry g;
    g.kernel = config.patch;
    g.stride = {1, 2, 2};
    g.padding = {config.patch[0] / 2, 1, 1};
    const int out = config.base_channels << s;
    stages_.emplace_back(in, out, g, rng);
    in = out;
  }
  head_ = Conv3d(in, 1, ops::ConvGeometry{}, rng);
}

Tensor Discriminator::operator()(const Tensor& video) const {
  if (video.rank() != 5) fail(ErrorKind::kShape, "discriminator expects [B, T, H, W, C]");
  const int factor = 1 << config_.stages;
  if (video.dim(2) % factor || video.dim(3) % factor) {
    fail(ErrorKind::kShape, "discriminator: " + std::to_string(config_.stages) + " stages need H and W divisible by " +
                                std::to_string(factor) + ", got " + shape_str(video.shape()));
  }
  Tensor x = video;
  for (const auto& stage : stages_) x = ops::leaky_relu(stage(x), Scalar(0.2));
  return head_(x);
}

ParamList Discriminator::parameters() const {
  ParamList out;
  for (std::size_t s = 0; s < stages_.size(); ++s) stages_[s].collect(out, "disc.stage" + std::to_string(s));
  head_.collect(out, "disc.head");
  return out;
}

GanLosses gan_losses(const Tensor& real_logits, const Tensor& fake_logits) {
  if (real_logits.shape() != fake_logits.shape()) {
    fail(ErrorKind::kShape, "gan_losses: logit maps differ " + shape_str(real_logits.shape()) + " vs " +
                                shape_str(fake_logits.shape()));
  }
  GanLosses out;
  out.discriminator = ops::add(ops::mean(ops::relu(ops::affine(real_logits, Scalar(-1), Scalar(1)))),
                               ops::mean(ops::relu(ops::affine(fake_logits, Scalar(1), Scalar(1)))));
  out.generator = ops::neg(ops::mean(fake_logits));
  return out;
}

Adam::Adam(ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), Scalar(0));
    v_.emplace_back(static_cast<std::size_t>(p.numel()), Scalar(0));
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
  const Scalar step_size = static_cast<Scalar>(lr_ / c1);
  const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2);
  const Scalar eps = static_cast<Scalar>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    const auto g = p.grad();
    if (g.empty() || !p.requires_grad()) continue;
    auto w = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

namespace {

ParamList trainable(ParamList params) {
  ParamList out;
  for (auto& entry : params) {
    if (entry.second.requires_grad()) out.push_back(std::move(entry));
  }
  return out;
}

double checked(const Tensor& t, const char* name, int step) {
  const double v = static_cast<double>(t.item());
  if (!std::isfinite(v)) {
    fail(ErrorKind::kTraining, std::string("non-finite ") + name + " loss at step " + std::to_string(step));
  }
  return v;
}

}  // namespace

Trainer::Trainer(Tokenizer& model, const TrainConfig& train, const LossWeights& weights, const DiscriminatorConfig& disc,
                 std::shared_ptr<const FeatureExtractor> extractor)
    : model_(model),
      train_(train),
      weights_(weights),
      disc_(disc, model.config().video_channels, train.seed ^ 0x9e3779b97f4a7c15ULL),
      extractor_(extractor ? std::move(extractor) : std::make_shared<RandomConvPyramid>()),
      opt_g_(trainable(model.parameters()), train.learning_rate, train.beta1, train.beta2),
      opt_d_(trainable(disc_.parameters()), train.learning_rate, train.beta1, train.beta2) {
  train.validate();
}

Trainer::Objective Trainer::generator_objective(const Tensor& batch, int step) {
  const bool gan_active = step >= train_.gan_start_step;
  const bool lfq = is_lfq(model_.config().quantizer);
  model_.set_training(true);

  Reconstruction rec = model_.forward(batch);
  LossReport report;
  const Tensor recon = recon_loss(batch, rec.video);
  const Tensor perceptual = perceptual_loss(batch, rec.video, *extractor_);
  Tensor total = ops::add(ops::scale(recon, static_cast<Scalar>(weights_.recon)),
                          ops::scale(perceptual, static_cast<Scalar>(weights_.perceptual)));
  report["recon"] = checked(recon, "recon", step);
  report["perceptual"] = checked(perceptual, "perceptual", step);
  report["gan"] = 0.0;
  if (gan_active) {
    // The generator half of the hinge objective needs only the fake logits.
    const Tensor g = ops::neg(ops::mean(disc_(rec.video)));
    total = ops::add(total, ops::scale(g, static_cast<Scalar>(weights_.gan)));
    report["gan"] = checked(g, "gan", step);
  }
  if (lfq) {
    const Tensor& entropy = rec.quant.aux.at("entropy");
    const Tensor& commitment = rec.quant.aux.at("commitment");
    total = ops::add(total, ops::add(ops::scale(entropy, static_cast<Scalar>(weights_.entropy)),
                                     ops::scale(commitment, static_cast<Scalar>(weights_.commitment))));
    report["entropy"] = checked(entropy, "entropy", step);
    report["commitment"] = checked(commitment, "commitment", step);
  }
  report["total"] = checked(total, "total", step);
  return {total, std::move(report), rec.video};
}

LossReport Trainer::train_step(const Tensor& batch, int step) {
  opt_g_.zero_grad();
  auto [total, report, video] = generator_objective(batch, step);
  total.backward();
  opt_g_.step();

  report["disc"] = 0.0;
  if (step >= train_.gan_start_step) {
    opt_d_.zero_grad();
    const Tensor d = gan_losses(disc_(batch), disc_(video.detach())).discriminator;
    report["disc"] = checked(d, "discriminator", step);
    d.backward();
    opt_d_.step();
  }
  return report;
}

FitResult fit(Trainer& trainer, const BatchSource& source, const FitOptions& options) {
  const TrainConfig& cfg = trainer.train_config();
  std::filesystem::create_directories(options.out_dir);
  const auto log_path = options.out_dir / "loss_log.jsonl";
  std::ofstream log(log_path, options.start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) fail(ErrorKind::kRuntime, "cannot open loss log " + log_path.string());
  FitResult result;
  for (int step = options.start_step; step < cfg.total_steps; ++step) {
    const LossReport report = trainer.train_step(source(step), step);
    if (step % cfg.log_interval == 0) {
      nlohmann::json row;
      row["step"] = step;
      for (const auto& [name, value] : report) row[name] = value;
      log << row.dump() << '\n';
      log.flush();
      result.log.emplace_back(step, report);
      if (options.on_log) options.on_log(step, report);
    }
    const int done = step + 1;
    if (options.save_checkpoint && (done % cfg.checkpoint_interval == 0 || done == cfg.total_steps)) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%07d.dvck", done);
      const auto path = options.out_dir / name;
      options.save_checkpoint(trainer, done, path);
      result.last_checkpoint = path;
    }
  }
  return result;
}

DVTK_NAMESPACE_END
