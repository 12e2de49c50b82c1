#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dvtk/backbone.hpp"

DVTK_NAMESPACE_BEGIN

inline constexpr double kPsnrCapDb = 99.0;
inline constexpr double kDynamicRange = 2.0;  // videos live in [-1, 1]

/// 10 log10(range^2 / MSE), capped at kPsnrCapDb.
double psnr(const Tensor& a, const Tensor& b);

/// Mean structural similarity over frames and channels of [..., H, W, C]
/// volumes. 11x11 Gaussian window (sigma 1.5); near the borders the window
/// is truncated to the frame and renormalised, so every pixel contributes.
double ssim(const Tensor& a, const Tensor& b);

struct MetricsRow {
  std::string clip_id;
  double psnr_db = 0;
  double ssim = 0;
  std::int64_t tokens = 0;
  double codebook_usage_fraction = 0;
  double perplexity = 1;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  MetricsRow aggregate;  // mean over rows, clip_id "mean"

  void write_csv(std::ostream& out) const;
};

/// Rows for reference/reconstruction pairs with the grids that produced them.
MetricsTable metrics_table(const std::vector<Tensor>& references, const std::vector<Tensor>& reconstructions,
                           const std::vector<TokenGrid>& grids);

/// Tokenizes and reconstructs every clip [T, H, W, C] in evaluation mode.
MetricsTable evaluate(const Tokenizer& model, const std::vector<Tensor>& clips);

DVTK_NAMESPACE_END
