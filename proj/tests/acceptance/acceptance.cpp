// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   dvtk_acceptance [--only 1,2,...] [--cache DIR]
//
// Criteria 8 and 9 train six desk-scale models (about half an hour each on
// one CPU core). Runs live under <cache>/acceptance and are resumed from
// their checkpoints, so an interrupted or repeated invocation reuses them.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dvtk/checkpoint.hpp"
#include "dvtk/cli.hpp"
#include "dvtk/config.hpp"
#include "dvtk/io.hpp"
#include "dvtk/metrics.hpp"
#include "dvtk/pipeline.hpp"
#include "dvtk/token_file.hpp"
#include "straight_through.hpp"

namespace fs = std::filesystem;
using namespace dvtk;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Scalar>(u(rng));
  return Tensor(std::move(shape), std::move(v));
}

Tensor normal(Shape shape, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0, sigma);
  Buffer v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Scalar>(n(rng));
  return Tensor(std::move(shape), std::move(v));
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.values(), y = b.values();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(Scalar)) == 0;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

TokenizerConfig toy_model(std::vector<KernelTriplet> kernels, int latent, QuantizerSpec q) {
  TokenizerConfig cfg;
  cfg.kernels = std::move(kernels);
  cfg.hidden_dims.assign(cfg.kernels.size(), 8);
  cfg.state_dim = 4;
  cfg.layers_per_block = 1;
  cfg.latent_channels = latent;
  cfg.quantizer = std::move(q);
  return cfg;
}

// ------------------------------------------------------------------ 1

Verdict quantizer_bijection() {
  std::vector<BaseQuantizerSpec> specs;
  for (int n = 1; n <= 6; ++n) specs.push_back(LfqSpec{n});
  for (const auto& levels : std::vector<std::vector<int>>{{3}, {5}, {3, 5}, {8, 5}, {3, 3, 3}}) {
    specs.push_back(FsqSpec{levels});
  }
  std::int64_t checked = 0, mismatches = 0;
  for (const auto& base : specs) {
    const QuantizerSpec spec = std::visit([](const auto& s) { return QuantizerSpec{s}; }, base);
    const auto size = static_cast<std::uint32_t>(codebook_size(base));
    TokenGrid grid;
    grid.quantizer = spec;
    grid.dims = {static_cast<int>(size)};
    for (std::uint32_t c = 0; c < size; ++c) grid.codes.push_back(c);
    // index -> value -> pre-image -> (index, value)
    const Tensor values = dequantize(grid);
    const QuantOutput q = quantize(representative_latent(grid), spec);
    const int C = base_channels(base);
    std::set<std::vector<Scalar>> distinct;
    for (std::uint32_t c = 0; c < size; ++c) {
      ++checked;
      std::vector<Scalar> v(values.values().begin() + c * C, values.values().begin() + (c + 1) * C);
      std::vector<Scalar> w(q.quantized.values().begin() + c * C, q.quantized.values().begin() + (c + 1) * C);
      bool ok = q.grid.codes[c] == c && v == w;
      // Per-pixel helpers agree with the batched path.
      if (const auto* l = std::get_if<LfqSpec>(&base)) {
        std::vector<Scalar> out(C);
        ok = ok && quant::lfq_encode_pixel(v, out) == c && out == v;
        quant::lfq_decode_pixel(c, out);
        ok = ok && out == v && l->n_bits == C;
      } else {
        const auto& levels = std::get<FsqSpec>(base).levels;
        std::vector<int> idx(C);
        quant::fsq_split(c, levels, idx);
        for (int i = 0; i < C; ++i) ok = ok && quant::fsq_value_index(v[i], levels[i]) == idx[i];
        ok = ok && quant::fsq_combine(idx, levels) == c;
      }
      distinct.insert(v);
      if (!ok) ++mismatches;
    }
    if (distinct.size() != size) mismatches += size - distinct.size();
  }
  return {mismatches == 0, std::to_string(checked) + " codes over 11 codebooks, " + std::to_string(mismatches) +
                               " mismatches"};
}

// ------------------------------------------------------------------ 2

Verdict pack_capacity() {
  std::int64_t tuples = 0, bad = 0;
  for (int n = 1; n <= 4; ++n) {
    for (int k = 1; k <= 3; ++k) {
      const std::uint64_t capacity = std::uint64_t{1} << (n * k);
      std::vector<bool> hit(capacity, false);
      std::vector<std::uint32_t> codes(k, 0);
      const std::uint32_t per = 1u << n;
      for (std::uint64_t t = 0; t < capacity; ++t) {
        std::uint64_t rest = t;
        for (int i = k - 1; i >= 0; --i) {
          codes[i] = static_cast<std::uint32_t>(rest % per);
          rest /= per;
        }
        ++tuples;
        const std::uint64_t packed = quant::pack_tokens(codes, n);
        if (packed >= capacity || hit[packed] || quant::unpack_tokens(packed, n, k) != codes) {
          ++bad;
          continue;
        }
        hit[packed] = true;
      }
      if (std::count(hit.begin(), hit.end(), true) != static_cast<std::ptrdiff_t>(capacity)) ++bad;
    }
  }
  return {bad == 0, std::to_string(tuples) + " tuples, N<=4, K<=3, " + std::to_string(bad) + " violations"};
}

// ------------------------------------------------------------------ 3

Verdict token_count_identity() {
  const FsqSpec fsq{{8, 8, 8, 5, 5, 5}};
  const auto plain = toy_model({{2, 4, 4}, {2, 2, 2}, {1, 1, 1}}, 6, fsq);
  const auto split = toy_model({{2, 4, 4}, {2, 2, 2}, {2, 1, 1}}, 12, ChannelSplitSpec{fsq, 2});
  std::mt19937_64 rng(3);
  const Tensor video = uniform({16, 240, 240, 3}, rng);
  std::int64_t counts[2];
  int i = 0;
  for (const auto* cfg : {&plain, &split}) {
    const Tokenizer model(*cfg, 1);
    NoGradGuard no_grad;
    const TokenGrid grid = model.tokenize(video);
    counts[i++] = grid.token_count();
  }
  return {counts[0] == 3600 && counts[1] == 3600,
          "FSQ 4x8x8 K=1: " + std::to_string(counts[0]) + ", CS-FSQ 8x8x8 K=2: " + std::to_string(counts[1])};
}

// ------------------------------------------------------------------ 4

Verdict causality() {
  const auto cfg = toy_model({{1, 2, 2}, {2, 2, 2}}, 4, LfqSpec{4});
  const Tokenizer model(cfg, 4);  // evaluation mode
  const int t = cfg.compression().t;
  std::mt19937_64 rng(4);
  const Tensor video = uniform({1, 8, 16, 16, 3}, rng);
  NoGradGuard no_grad;
  const Tensor base = model.encode(video);
  const int latent_t = base.dim(1);
  bool ok = true;
  std::string detail = "t=" + std::to_string(t);
  for (int tau : {2, 4, 6}) {
    Tensor perturbed = video.clone();
    const Tensor noise = uniform(video.shape(), rng);
    const std::int64_t per_frame = video.numel() / video.dim(1);
    for (std::int64_t i = tau * per_frame; i < video.numel(); ++i) perturbed.mutable_values()[i] = noise.values()[i];
    const Tensor lat = model.encode(perturbed);
    const int keep = (tau + t - 1) / t;
    const std::int64_t per_latent = base.numel() / latent_t;
    const bool kept = std::equal(base.values().begin(), base.values().begin() + keep * per_latent, lat.values().begin());
    // The perturbation must reach the later indices, or the check is vacuous.
    const bool moved = !std::equal(base.values().begin() + keep * per_latent, base.values().end(),
                                   lat.values().begin() + keep * per_latent);
    ok = ok && kept && moved;
    detail += ", tau=" + std::to_string(tau) + ": first " + std::to_string(keep) + (kept ? " equal" : " CHANGED") +
              (moved ? "" : " (later indices unchanged)");
  }
  return {ok, detail};
}

// ------------------------------------------------------------------ 5

Verdict straight_through() {
  const auto lfq = acceptance::straight_through_check(true, 32, 1e-3);
  const auto fsq = acceptance::straight_through_check(false, 32, 1e-3);
  auto describe_check = [](const acceptance::GradientCheck& c) {
    return c.quantizer + " worst rel " + fmt(c.worst_rel, 2) + " (" + std::to_string(c.nonzero) + "/" +
           std::to_string(c.checked) + " above 1e-6)";
  };
  return {lfq.failed == 0 && fsq.failed == 0 && lfq.checked == 32 && fsq.checked == 32,
          describe_check(lfq) + ", " + describe_check(fsq) + ", 32 encoder parameters each"};
}

// ------------------------------------------------------------------ 6

Verdict resolution_generalization(const RunConfig& desk) {
  const Tokenizer model(desk.model, 6);
  std::mt19937_64 rng(6);
  bool ok = desk.model.attention == MixerKind::kStateSpace;
  std::string detail;
  for (const Shape& shape : {Shape{1, 8, 32, 32, 3}, Shape{1, 8, 48, 48, 3}, Shape{1, 16, 64, 80, 3}}) {
    NoGradGuard no_grad;
    const Tensor video = uniform(shape, rng);
    const Tensor latent = model.encode(video);
    const auto extent = latent_extent(desk.model, shape[1], shape[2], shape[3]);
    const Tensor out = model.decode(quantize(latent, desk.model.quantizer).quantized, shape[1]);
    const bool good = latent.shape() == Shape{1, extent[0], extent[1], extent[2], desk.model.latent_channels} &&
                      out.shape() == shape;
    ok = ok && good;
    if (!detail.empty()) detail += ", ";
    detail += std::to_string(shape[1]) + "x" + std::to_string(shape[2]) + "x" + std::to_string(shape[3]) + " -> " +
              shape_str(latent.shape()) + (good ? "" : " WRONG");
  }
  return {ok, detail};
}

// ------------------------------------------------------------------ 7

Verdict degeneracy() {
  const std::vector<BaseQuantizerSpec> bases = {LfqSpec{5}, FsqSpec{{8, 5, 3}}};
  std::mt19937_64 rng(7);
  int compared = 0, differ = 0;
  for (const auto& base : bases) {
    const QuantizerSpec plain = std::visit([](const auto& s) { return QuantizerSpec{s}; }, base);
    const int C = base_channels(base);
    for (int i = 0; i < 100; ++i) {
      const Tensor latent = normal({2, 3, 3, C}, rng, 1.0);
      const QuantOutput ref = quantize(latent, plain);
      for (const QuantizerSpec& wrapped : {QuantizerSpec{ChannelSplitSpec{base, 1}}, QuantizerSpec{ResidualSpec{base, 1}}}) {
        const QuantOutput q = quantize(latent, wrapped);
        bool same = same_bits(q.quantized, ref.quantized) && q.grid.codes == ref.grid.codes &&
                    q.grid.dims == ref.grid.dims && q.aux.size() == ref.aux.size();
        for (const auto& [name, value] : ref.aux) same = same && q.aux.count(name) && same_bits(q.aux.at(name), value);
        ++compared;
        if (!same) ++differ;
      }
    }
  }
  return {differ == 0, std::to_string(compared) + " comparisons (K=1 and r=1, LFQ and FSQ), " + std::to_string(differ) +
                           " differ"};
}

// ------------------------------------------------------------------ 8, 9

struct SeedRun {
  double psnr = NAN;
  double recon_start = NAN;
  double recon_end = NAN;
  double seconds = NAN;
};

// Step-0 reconstruction loss against the mean of the last ten log rows.
SeedRun read_run(const fs::path& dir) {
  SeedRun r;
  std::ifstream log(dir / "loss_log.jsonl");
  std::map<int, double> recon;  // later rows win after a resume
  for (std::string line; std::getline(log, line);) {
    const auto row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_object() && row.contains("step") && row.contains("recon")) recon[row["step"]] = row["recon"];
  }
  if (recon.count(0)) r.recon_start = recon[0];
  if (recon.size() >= 10) {
    double sum = 0;
    auto it = recon.end();
    for (int i = 0; i < 10; ++i) sum += (--it)->second;
    r.recon_end = sum / 10;
  }
  std::ifstream info(dir / "run_info.json");
  if (info) {
    const auto j = nlohmann::json::parse(info, nullptr, false);
    if (j.is_object()) r.seconds = j.value("train_seconds", NAN);
  }
  return r;
}

struct SweepResult {
  std::vector<SweepRow> rows;
  std::map<std::string, std::vector<SeedRun>> runs;
};

SweepResult run_desk_sweep(const fs::path& cache) {
  std::vector<std::pair<std::string, std::string>> errors;
  const SweepConfig sweep = load_sweep_config(fs::path(DVTK_SOURCE_DIR) / "configs" / "desk_sweep.yaml", &errors);
  SweepOptions options;
  options.out_dir = cache / "acceptance";
  options.resume = true;
  options.progress = [](const std::string& msg) { std::cerr << "  training " << msg << std::endl; };
  SweepResult result;
  result.rows = run_sweep(sweep, options, errors);
  std::ostringstream csv;
  write_sweep_table(csv, result.rows);
  write_file_atomic(options.out_dir / "sweep_table.csv", csv.str());
  std::cout << "sweep table (" << (options.out_dir / "sweep_table.csv").string() << "):\n" << csv.str();
  for (const auto& cell : sweep.cells) {
    for (std::uint64_t seed : sweep.seeds) {
      result.runs[cell.name].push_back(read_run(options.out_dir / cell.name / ("seed_" + std::to_string(seed))));
    }
  }
  return result;
}

Verdict training_smoke(const SweepResult& sweep) {
  const auto it = sweep.runs.find("cs_fsq_8x8x8_k2");
  if (it == sweep.runs.end()) return {false, "cell cs_fsq_8x8x8_k2 missing"};
  std::vector<double> psnr, drop, seconds;
  for (const auto& r : it->second) {
    psnr.push_back(r.psnr);
    drop.push_back(1 - r.recon_end / r.recon_start);
    seconds.push_back(r.seconds);
  }
  for (const auto& row : sweep.rows) {
    if (row.cell == it->first) psnr = row.psnr;
  }
  const double med_psnr = median(psnr), med_drop = median(drop);
  const double slowest = *std::max_element(seconds.begin(), seconds.end());
  std::string per_seed;
  for (std::size_t i = 0; i < psnr.size(); ++i) {
    per_seed += (i ? "; " : "") + fmt(psnr[i]) + " dB, drop " + fmt(100 * drop[i], 3) + "%";
  }
  const bool ok = med_drop >= 0.5 && med_psnr > 18 && std::isfinite(slowest) && slowest <= 3 * 3600;
  return {ok, "median recon drop " + fmt(100 * med_drop, 3) + "% (need >= 50%), median held-out PSNR " + fmt(med_psnr) +
                  " dB (need > 18), slowest run " + fmt(slowest / 60, 3) + " min (limit 180) [" + per_seed + "]"};
}

Verdict channel_split_benefit(const SweepResult& sweep) {
  double cs = NAN, fsq = NAN;
  std::int64_t cs_tokens = -1, fsq_tokens = -2;
  for (const auto& row : sweep.rows) {
    if (row.cell == "cs_fsq_8x8x8_k2") cs = row.median_psnr, cs_tokens = row.tokens_encoded;
    if (row.cell == "fsq_4x8x8") fsq = row.median_psnr, fsq_tokens = row.tokens_encoded;
  }
  const bool ok = cs >= fsq - 0.3 && cs_tokens == fsq_tokens;
  return {ok, "median PSNR CS-FSQ 8x8x8 K=2 " + fmt(cs) + " dB vs FSQ 4x8x8 " + fmt(fsq) + " dB (need CS >= FSQ - 0.3), " +
                  std::to_string(cs_tokens) + " vs " + std::to_string(fsq_tokens) + " tokens per clip"};
}

// ------------------------------------------------------------------ 10

// Brute-force windowed SSIM: per pixel, an 11x11 Gaussian (sigma 1.5)
// truncated to the frame and renormalised over the covered pixels.
double ssim_oracle(const Tensor& a, const Tensor& b) {
  const int T = a.dim(0), H = a.dim(1), W = a.dim(2), C = a.dim(3);
  const double c1 = std::pow(0.01 * 2, 2), c2 = std::pow(0.03 * 2, 2);
  double total = 0;
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double wsum = 0, ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
          for (int dy = -5; dy <= 5; ++dy)
            for (int dx = -5; dx <= 5; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              const double w = std::exp(-(dy * dy + dx * dx) / (2 * 1.5 * 1.5));
              const std::size_t i = ((static_cast<std::size_t>(t) * H + yy) * W + xx) * C + c;
              const double va = a.values()[i], vb = b.values()[i];
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
          total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
  return total / (static_cast<double>(T) * C * H * W);
}

Verdict metric_oracles() {
  std::mt19937_64 rng(10);
  double worst = 0;
  for (const Shape& shape : {Shape{2, 8, 8, 3}, Shape{1, 13, 17, 2}, Shape{3, 24, 20, 3}}) {
    const Tensor a = uniform(shape, rng);
    const Tensor b = ops::add(a, ops::scale(uniform(shape, rng), 0.3f));
    worst = std::max(worst, std::abs(ssim(a, b) - ssim_oracle(a, b)));
    const Tensor c = uniform(shape, rng);
    worst = std::max(worst, std::abs(ssim(a, c) - ssim_oracle(a, c)));
  }
  const Tensor x = uniform({4, 16, 16, 3}, rng, -0.8, 0.8);
  const double p = psnr(x, ops::affine(x, 1, 0.2f));
  return {worst <= 1e-6 && std::abs(p - 20) <= 0.01,
          "SSIM max |impl - oracle| " + fmt(worst, 2) + " (need <= 1e-6), PSNR of 0.2 offset " + fmt(p, 6) + " dB"};
}

// ------------------------------------------------------------------ 11

TokenFile random_token_file(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto random_base = [&]() -> BaseQuantizerSpec {
    if (pick(0, 1) == 0) return LfqSpec{pick(1, 18)};
    std::vector<int> levels(pick(1, 6));
    for (auto& l : levels) l = pick(2, 8);
    return FsqSpec{levels};
  };
  TokenFile f;
  switch (pick(0, 3)) {
    case 0: f.grid.quantizer = std::visit([](const auto& s) { return QuantizerSpec{s}; }, random_base()); break;
    case 1: f.grid.quantizer = ChannelSplitSpec{random_base(), pick(1, 4)}; break;
    case 2: f.grid.quantizer = ResidualSpec{random_base(), pick(1, 4)}; break;
    default: f.grid.quantizer = ChannelSplitSpec{LfqSpec{pick(1, 16)}, pick(1, 2)}; break;
  }
  f.grid.dims = {pick(1, 4), pick(1, 6), pick(1, 6)};
  f.grid.codes_per_pixel = codes_per_pixel(f.grid.quantizer);
  const std::uint64_t size = codebook_size(base_of(f.grid.quantizer));
  std::uniform_int_distribution<std::uint64_t> code(0, size - 1);
  for (std::int64_t i = 0; i < f.grid.token_count(); ++i) f.grid.codes.push_back(static_cast<std::uint32_t>(code(rng)));
  f.video_dims = {f.grid.dims[0] * 2, f.grid.dims[1] * 8, f.grid.dims[2] * 8, 3};
  f.compression = {2, 8, 8};
  f.config_hash = sha256_hex(std::to_string(rng())).substr(0, 16);
  f.packed = packable(f.grid.quantizer) && pick(0, 1) == 1;
  return f;
}

Verdict token_file_format(const fs::path& scratch) {
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  std::mt19937_64 rng(11);
  int mismatches = 0, packed = 0;
  for (int i = 0; i < 1000; ++i) {
    const TokenFile f = random_token_file(rng);
    packed += f.packed;
    const fs::path path = scratch / "grid.dvtk";
    write_token_file(path, f);
    const std::string bytes = read_file(path);
    const TokenFile back = read_token_file(path);
    if (!(back == f) || serialize_token_file(back) != bytes) ++mismatches;
  }

  // A real checkpoint and token file, then two corrupted copies fed to the CLI.
  RunConfig cfg;
  cfg.model = toy_model({{1, 2, 2}, {2, 2, 2}}, 4, LfqSpec{4});
  cfg.train.total_steps = 1;
  cfg.train.gan_start_step = 1;
  cfg.train.clip_length = 2;
  cfg.discriminator = {4, 1, {3, 4, 4}};
  cfg.data.sampler.crop = 8;
  cfg.data.sampler.clip_length = 2;
  cfg.output_dir = scratch;
  Tokenizer model(cfg.model, 0);
  Trainer trainer(model, cfg.train, cfg.loss_weights, cfg.discriminator);
  const fs::path ckpt = scratch / "model.dvck";
  save_checkpoint(ckpt, cfg, trainer, 0);
  std::mt19937_64 vid_rng(12);
  const Tensor clip = uniform({2, 8, 8, 3}, vid_rng);
  TokenFile good;
  {
    NoGradGuard no_grad;
    good.grid = model.tokenize(clip);
  }
  good.video_dims = clip.shape();
  good.compression = cfg.model.compression();
  good.config_hash = config_hash(cfg);
  const std::string bytes = serialize_token_file(good);
  std::string bad_magic = bytes;
  bad_magic[0] ^= 0x20;
  write_file_atomic(scratch / "good.dvtk", bytes);
  write_file_atomic(scratch / "magic.dvtk", bad_magic);
  write_file_atomic(scratch / "truncated.dvtk", bytes.substr(0, bytes.size() - 3));

  auto decode = [&](const std::string& name) {
    std::ostringstream out, err;
    return cli::run({"decode", "--checkpoint", ckpt.string(), "--in", (scratch / name).string(), "--out",
                     (scratch / "out.raw").string()},
                    out, err);
  };
  const int good_code = decode("good.dvtk");
  const int magic_code = decode("magic.dvtk");
  const int truncated_code = decode("truncated.dvtk");
  fs::remove_all(scratch);
  const bool ok = mismatches == 0 && good_code == 0 && magic_code == 3 && truncated_code == 3;
  return {ok, "1000 grids (" + std::to_string(packed) + " packed), " + std::to_string(mismatches) +
                  " mismatches; decode exit codes: intact " + std::to_string(good_code) + ", bad magic " +
                  std::to_string(magic_code) + ", truncated " + std::to_string(truncated_code)};
}

fs::path default_cache() {
  const char* env = std::getenv("DVTK_CACHE");
  return env && *env ? fs::path(env) : fs::temp_directory_path() / "dvtk_cache";
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path cache = default_cache();
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      for (std::string item; std::getline(list, item, ',');) only.insert(std::stoi(item));
    } else if (arg == "--cache" && i + 1 < argc) {
      cache = argv[++i];
    } else {
      std::cerr << "usage: dvtk_acceptance [--only 1,2,...] [--cache DIR]\n";
      return 2;
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  const RunConfig desk = load_run_config(fs::path(DVTK_SOURCE_DIR) / "configs" / "desk_cs_fsq.yaml");
  std::optional<SweepResult> sweep;
  auto desk_sweep = [&]() -> const SweepResult& {
    if (!sweep) sweep = run_desk_sweep(cache);
    return *sweep;
  };

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"quantizer bijection", quantizer_bijection},
      {"pack/unpack capacity", pack_capacity},
      {"token-count identity", token_count_identity},
      {"causality", causality},
      {"straight-through gradients", straight_through},
      {"resolution generalization", [&] { return resolution_generalization(desk); }},
      {"degeneracy equalities", degeneracy},
      {"desk-scale training smoke", [&] { return training_smoke(desk_sweep()); }},
      {"directional channel-split benefit", [&] { return channel_split_benefit(desk_sweep()); }},
      {"metric oracles", metric_oracles},
      {"token file format", [&] { return token_file_format(cache / "acceptance_token_files"); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted(n)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << n << "  " << criteria[i].first << ": "
              << v.detail << " (" << fmt(secs, 3) << " s)" << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
