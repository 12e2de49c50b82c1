#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dvtk/checkpoint.hpp"
#include "dvtk/metrics.hpp"

DVTK_NAMESPACE_BEGIN

struct RunOptions {
  bool resume = false;  // continue from the newest checkpoint in the output dir
  std::shared_ptr<const FeatureExtractor> extractor;
  std::function<void(int step, const LossReport&)> on_log;
};

struct RunOutcome {
  std::string config_hash;
  std::vector<std::pair<int, LossReport>> log;  // rows written by this process
  std::filesystem::path checkpoint;
  MetricsTable heldout;
  /// Wall time spent in training steps, summed over resumed segments
  /// (kept in run_info.json next to the checkpoints).
  double train_seconds = 0;
};

/// Trains `config` with its synthetic data stream into config.output_dir and
/// evaluates the result on the held-out clips.
RunOutcome train_and_evaluate(const RunConfig& config, const RunOptions& options = {});

struct SweepRow {
  std::string cell;
  std::string quantizer;
  KernelTriplet compression;
  std::uint64_t codebook_size = 0;
  int channel_size = 0;  // latent channels
  int codes_per_pixel = 0;
  std::int64_t tokens = 0;          // analytic, per held-out clip
  std::int64_t tokens_encoded = 0;  // from an actual encode
  std::vector<std::uint64_t> seeds;
  std::vector<double> psnr, ssim;   // per seed, NaN where the run failed
  std::vector<double> train_seconds;
  double median_psnr = 0;
  double median_ssim = 0;
  std::string status;               // "ok" or the first failure
};

struct SweepOptions {
  std::filesystem::path out_dir;  // one subdirectory per cell and seed
  bool resume = false;            // pick up each run from its newest checkpoint
  std::shared_ptr<const FeatureExtractor> extractor;
  std::function<void(const std::string&)> progress;
};

/// Trains and evaluates every cell for every seed. A failing cell or seed
/// is recorded in its row and the sweep moves on.
std::vector<SweepRow> run_sweep(const SweepConfig& sweep, const SweepOptions& options,
                                const std::vector<std::pair<std::string, std::string>>& parse_errors = {});

/// CSV with columns cell, quantizer, compression, codebook_size,
/// channel_size, codes_per_pixel, tokens, tokens_encoded, median_psnr_db,
/// median_ssim, psnr_per_seed, ssim_per_seed, train_seconds_per_seed, status.
void write_sweep_table(std::ostream& out, const std::vector<SweepRow>& rows);

/// Median of the finite entries; NaN when there are none.
double median(std::vector<double> values);

DVTK_NAMESPACE_END
