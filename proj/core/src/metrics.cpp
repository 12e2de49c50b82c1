#include "dvtk/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

DVTK_NAMESPACE_BEGIN

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * kDynamicRange) * (0.01 * kDynamicRange);
constexpr double kC2 = (0.03 * kDynamicRange) * (0.03 * kDynamicRange);

void require_same(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kConfig, std::string(who) + ": shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> w{};
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2 * kSigma * kSigma));
  }
  return w;
}

// Normalised separable blur of an H x W plane with the truncated window.
void blur(const std::vector<double>& in, std::vector<double>& out, std::vector<double>& tmp, int H, int W,
          const std::array<double, kWindow>& taps) {
  const int r = kWindow / 2;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0, norm = 0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx < 0 || xx >= W) continue;
        acc += taps[k + r] * in[static_cast<std::size_t>(y) * W + xx];
        norm += taps[k + r];
      }
      tmp[static_cast<std::size_t>(y) * W + x] = acc / norm;
    }
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0, norm = 0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy < 0 || yy >= H) continue;
        acc += taps[k + r] * tmp[static_cast<std::size_t>(yy) * W + x];
        norm += taps[k + r];
      }
      out[static_cast<std::size_t>(y) * W + x] = acc / norm;
    }
  }
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  require_same(a, b, "psnr");
  const auto x = a.values(), y = b.values();
  if (x.empty()) fail(ErrorKind::kConfig, "psnr: empty input");
  double se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.size());
  if (mse <= 0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(kDynamicRange * kDynamicRange / mse));
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same(a, b, "ssim");
  if (a.rank() < 3) fail(ErrorKind::kShape, "ssim expects [..., H, W, C], got " + shape_str(a.shape()));
  const int H = a.dim(-3), W = a.dim(-2), C = a.dim(-1);
  const std::int64_t planes = a.numel() / (static_cast<std::int64_t>(H) * W * C);
  const auto taps = gaussian_taps();
  const std::size_t n = static_cast<std::size_t>(H) * W;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n), tmp(n);
  std::vector<double> mx(n), my(n), sxx(n), syy(n), sxy(n);
  const auto va = a.values(), vb = b.values();
  double total = 0;
  for (std::int64_t f = 0; f < planes; ++f) {
    for (int c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < n; ++p) {
        const std::size_t idx = (static_cast<std::size_t>(f) * n + p) * C + c;
        x[p] = va[idx];
        y[p] = vb[idx];
        xx[p] = x[p] * x[p];
        yy[p] = y[p] * y[p];
        xy[p] = x[p] * y[p];
      }
      blur(x, mx, tmp, H, W, taps);
      blur(y, my, tmp, H, W, taps);
      blur(xx, sxx, tmp, H, W, taps);
      blur(yy, syy, tmp, H, W, taps);
      blur(xy, sxy, tmp, H, W, taps);
      double plane = 0;
      for (std::size_t p = 0; p < n; ++p) {
        const double vx = sxx[p] - mx[p] * mx[p];
        const double vy = syy[p] - my[p] * my[p];
        const double cov = sxy[p] - mx[p] * my[p];
        plane += ((2 * mx[p] * my[p] + kC1) * (2 * cov + kC2)) /
                 ((mx[p] * mx[p] + my[p] * my[p] + kC1) * (vx + vy + kC2));
      }
      total += plane / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(planes * C);
}

void MetricsTable::write_csv(std::ostream& out) const {
  out << "clip_id,psnr_db,ssim,tokens,codebook_usage_fraction,perplexity\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.clip_id << ',' << r.psnr_db << ',' << r.ssim << ',' << r.tokens << ',' << r.codebook_usage_fraction << ','
        << r.perplexity << '\n';
  }
}

MetricsTable metrics_table(const std::vector<Tensor>& references, const std::vector<Tensor>& reconstructions,
                           const std::vector<TokenGrid>& grids) {
  if (references.size() != reconstructions.size() || references.size() != grids.size()) {
    fail(ErrorKind::kConfig, "metrics_table: reference, reconstruction and grid counts differ");
  }
  MetricsTable table;
  table.aggregate.clip_id = "mean";
  table.aggregate.perplexity = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    MetricsRow row;
    row.clip_id = "clip_" + std::to_string(i);
    row.psnr_db = psnr(references[i], reconstructions[i]);
    row.ssim = ssim(references[i], reconstructions[i]);
    row.tokens = grids[i].token_count();
    const CodebookUsage usage = codebook_usage(grids[i]);
    row.codebook_usage_fraction = usage.used_fraction;
    row.perplexity = usage.perplexity;
    table.rows.push_back(row);
  }
  const double n = static_cast<double>(table.rows.size());
  if (n > 0) {
    double tokens = 0;
    for (const auto& r : table.rows) {
      table.aggregate.psnr_db += r.psnr_db / n;
      table.aggregate.ssim += r.ssim / n;
      tokens += static_cast<double>(r.tokens);
      table.aggregate.codebook_usage_fraction += r.codebook_usage_fraction / n;
      table.aggregate.perplexity += r.perplexity / n;
    }
    table.aggregate.tokens = static_cast<std::int64_t>(std::llround(tokens / n));
  }
  return table;
}

MetricsTable evaluate(const Tokenizer& model, const std::vector<Tensor>& clips) {
  if (model.training()) fail(ErrorKind::kConfig, "evaluate: model must be in evaluation mode");
  NoGradGuard no_grad;
  std::vector<Tensor> recons;
  std::vector<TokenGrid> grids;
  for (const auto& clip : clips) {
    grids.push_back(model.tokenize(clip));
    recons.push_back(model.detokenize(grids.back(), clip.dim(0)));
  }
  return metrics_table(clips, recons, grids);
}

DVTK_NAMESPACE_END
