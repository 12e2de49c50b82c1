#include "dvtk/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "dvtk/data.hpp"
#include "dvtk/io.hpp"

DVTK_NAMESPACE_BEGIN

RunOutcome train_and_evaluate(const RunConfig& config, const RunOptions& options) {
  config.validate();
  RunOutcome outcome;
  outcome.config_hash = config_hash(config);

  Tokenizer model(config.model, config.train.seed);
  model.set_training(true);
  Trainer trainer(model, config.train, config.loss_weights, config.discriminator, options.extractor);

  FitOptions fit_options;
  fit_options.out_dir = config.output_dir;
  const auto info_path = config.output_dir / "run_info.json";
  double earlier_seconds = 0;
  if (options.resume) {
    const auto ckpt = latest_checkpoint(config.output_dir);
    if (!ckpt.empty()) {
      const CheckpointHeader header = read_checkpoint_header(ckpt);
      if (header.config_hash != outcome.config_hash) {
        fail(ErrorKind::kCompatibility, ckpt.string() + " has config hash " + header.config_hash + ", this run " +
                                            outcome.config_hash);
      }
      fit_options.start_step = restore_trainer(ckpt, trainer);
      outcome.checkpoint = ckpt;
      if (std::filesystem::exists(info_path)) {
        const auto info = nlohmann::json::parse(read_file(info_path), nullptr, false);
        if (info.is_object() && info.value("config_hash", "") == outcome.config_hash) {
          earlier_seconds = info.value("train_seconds", 0.0);
        }
      }
    }
  }
  fit_options.save_checkpoint = [&](Trainer& t, int step, const std::filesystem::path& path) {
    save_checkpoint(path, config, t, step);
  };
  fit_options.on_log = options.on_log;
  const BatchSource source = [&](int step) { return synthetic_batch(config.data, config.train.batch_size, step); };
  const auto started = std::chrono::steady_clock::now();
  FitResult fitted = fit(trainer, source, fit_options);
  outcome.train_seconds =
      earlier_seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const nlohmann::json info = {{"config_hash", outcome.config_hash},
                               {"steps", config.train.total_steps},
                               {"train_seconds", outcome.train_seconds}};
  write_file_atomic(info_path, info.dump(2) + "\n");
  outcome.log = std::move(fitted.log);
  if (!fitted.last_checkpoint.empty()) outcome.checkpoint = fitted.last_checkpoint;

  model.set_training(false);
  outcome.heldout = evaluate(model, held_out_clips(config.data));
  std::ostringstream csv;
  outcome.heldout.write_csv(csv);
  write_file_atomic(config.output_dir / "heldout_metrics.csv", csv.str());
  return outcome;
}

double median(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return !std::isfinite(v); }), values.end());
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<SweepRow> run_sweep(const SweepConfig& sweep, const SweepOptions& options,
                                const std::vector<std::pair<std::string, std::string>>& parse_errors) {
  std::vector<SweepRow> rows;
  for (const auto& [name, message] : parse_errors) {
    SweepRow row;
    row.cell = name;
    row.median_psnr = row.median_ssim = std::numeric_limits<double>::quiet_NaN();
    row.status = "invalid config: " + message;
    rows.push_back(row);
  }
  for (const auto& cell : sweep.cells) {
    const TokenizerConfig& m = cell.config.model;
    SweepRow row;
    row.cell = cell.name;
    row.quantizer = describe(m.quantizer);
    row.compression = m.compression();
    row.codebook_size = codebook_size(base_of(m.quantizer));
    row.channel_size = m.latent_channels;
    row.codes_per_pixel = codes_per_pixel(m.quantizer);
    const auto& sampler = cell.config.data.sampler;
    row.tokens = token_count(m, sampler.clip_length, sampler.crop, sampler.crop);
    row.status = "ok";
    std::string dir_name = cell.name;
    std::replace_if(dir_name.begin(), dir_name.end(), [](char c) { return c == '/' || c == '\\' || c == ' '; }, '_');
    for (std::uint64_t seed : sweep.seeds) {
      RunConfig cfg = cell.config;
      cfg.train.seed = seed;
      cfg.output_dir = options.out_dir / dir_name / ("seed_" + std::to_string(seed));
      if (options.progress) options.progress(cell.name + " seed " + std::to_string(seed));
      row.seeds.push_back(seed);
      try {
        RunOptions run;
        run.extractor = options.extractor;
        run.resume = options.resume;
        const RunOutcome out = train_and_evaluate(cfg, run);
        row.psnr.push_back(out.heldout.aggregate.psnr_db);
        row.ssim.push_back(out.heldout.aggregate.ssim);
        row.train_seconds.push_back(out.train_seconds);
        row.tokens_encoded = out.heldout.rows.empty() ? 0 : out.heldout.rows.front().tokens;
        if (row.tokens_encoded != row.tokens && row.status == "ok") {
          row.status = "token count mismatch: analytic " + std::to_string(row.tokens) + ", encoded " +
                       std::to_string(row.tokens_encoded);
        }
      } catch (const std::exception& e) {
        row.psnr.push_back(std::numeric_limits<double>::quiet_NaN());
        row.ssim.push_back(std::numeric_limits<double>::quiet_NaN());
        row.train_seconds.push_back(std::numeric_limits<double>::quiet_NaN());
        if (row.status == "ok") row.status = "seed " + std::to_string(seed) + " failed: " + e.what();
      }
    }
    row.median_psnr = median(row.psnr);
    row.median_ssim = median(row.ssim);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string joined(const std::vector<double>& values) {
  std::ostringstream os;
  os << std::setprecision(6);
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? ";" : "") << values[i];
  return os.str();
}

}  // namespace

void write_sweep_table(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "cell,quantizer,compression,codebook_size,channel_size,codes_per_pixel,tokens,tokens_encoded,median_psnr_db,"
         "median_ssim,psnr_per_seed,ssim_per_seed,train_seconds_per_seed,status\n";
  out << std::setprecision(6);
  for (const auto& r : rows) {
    const auto& c = r.compression;
    out << csv_field(r.cell) << ',' << csv_field(r.quantizer) << ',' << c.t << 'x' << c.h << 'x' << c.w << ','
        << r.codebook_size << ',' << r.channel_size << ',' << r.codes_per_pixel << ',' << r.tokens << ','
        << r.tokens_encoded << ',' << r.median_psnr << ',' << r.median_ssim << ',' << joined(r.psnr) << ','
        << joined(r.ssim) << ',' << joined(r.train_seconds) << ',' << csv_field(r.status) << '\n';
  }
}

DVTK_NAMESPACE_END
