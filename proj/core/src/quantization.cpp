#include "dvtk/quantization.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "dvtk/ops.hpp"

DVTK_NAMESPACE_BEGIN

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

constexpr int kMaxCodeBits = 32;

void validate_base(const BaseQuantizerSpec& base) {
  std::visit(Overloaded{
                 [](const LfqSpec& s) {
                   if (s.n_bits < 1 || s.n_bits > kMaxCodeBits) {
                     fail(ErrorKind::kConfig, "LFQ n_bits must be in [1, 32], got " + std::to_string(s.n_bits));
                   }
                 },
                 [](const FsqSpec& s) {
                   if (s.levels.empty()) fail(ErrorKind::kConfig, "FSQ levels must not be empty");
                   std::uint64_t size = 1;
                   for (int l : s.levels) {
                     if (l < 2) fail(ErrorKind::kConfig, "FSQ level must be >= 2, got " + std::to_string(l));
                     size *= static_cast<std::uint64_t>(l);
                     if (size > (std::uint64_t{1} << kMaxCodeBits)) {
                       fail(ErrorKind::kConfig, "FSQ codebook exceeds 2^32 entries");
                     }
                   }
                 },
             },
             base);
}

// Split a latent [..., C] into (pixel dims, channel count) and check C.
Shape pixel_dims(const Tensor& latent, int channels, const char* who) {
  if (!latent.defined() || latent.rank() < 1) fail(ErrorKind::kShape, std::string(who) + ": latent must have rank >= 1");
  if (latent.dim(-1) != channels) {
    fail(ErrorKind::kConfig, std::string(who) + ": latent has " + std::to_string(latent.dim(-1)) +
                                 " channels, quantizer requires " + std::to_string(channels));
  }
  return Shape(latent.shape().begin(), latent.shape().end() - 1);
}

void require_finite(const Tensor& latent, const char* who) {
  for (Scalar v : latent.values()) {
    if (!std::isfinite(v)) fail(ErrorKind::kInput, std::string(who) + ": latent contains non-finite values");
  }
}

struct RawQuant {
  Buffer values;
  std::vector<std::uint32_t> codes;  // one per pixel
};

RawQuant lfq_raw(std::span<const Scalar> v, int n) {
  const std::size_t pixels = v.size() / static_cast<std::size_t>(n);
  RawQuant out{Buffer(v.size()), std::vector<std::uint32_t>(pixels)};
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::size_t off = p * static_cast<std::size_t>(n);
    out.codes[p] = quant::lfq_encode_pixel(v.subspan(off, n), std::span<Scalar>(out.values).subspan(off, n));
  }
  return out;
}

RawQuant fsq_raw(std::span<const Scalar> v, const std::vector<int>& levels) {
  const std::size_t m = levels.size();
  const std::size_t pixels = v.size() / m;
  RawQuant out{Buffer(v.size()), std::vector<std::uint32_t>(pixels)};
  std::vector<int> idx(m);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      idx[i] = quant::fsq_level_index(v[p * m + i], levels[i]);
      out.values[p * m + i] = quant::fsq_level_value(idx[i], levels[i]);
    }
    out.codes[p] = quant::fsq_combine(idx, levels);
  }
  return out;
}

RawQuant base_raw(std::span<const Scalar> v, const BaseQuantizerSpec& base) {
  return std::visit(Overloaded{
                        [&](const LfqSpec& s) { return lfq_raw(v, s.n_bits); },
                        [&](const FsqSpec& s) { return fsq_raw(v, s.levels); },
                    },
                    base);
}

Buffer base_decode_values(std::span<const std::uint32_t> codes, std::size_t stride, std::size_t offset,
                                       const BaseQuantizerSpec& base) {
  const int c = base_channels(base);
  const std::uint64_t size = codebook_size(base);
  const std::size_t pixels = codes.size() / stride;
  Buffer values(pixels * static_cast<std::size_t>(c));
  std::vector<int> idx(static_cast<std::size_t>(c));
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::uint32_t code = codes[p * stride + offset];
    if (code >= size) {
      fail(ErrorKind::kData, "code " + std::to_string(code) + " out of range for codebook of size " + std::to_string(size));
    }
    std::span<Scalar> out(values.data() + p * c, static_cast<std::size_t>(c));
    std::visit(Overloaded{
                   [&](const LfqSpec&) { quant::lfq_decode_pixel(code, out); },
                   [&](const FsqSpec& s) {
                     quant::fsq_split(code, s.levels, idx);
                     for (int i = 0; i < c; ++i) out[i] = quant::fsq_level_value(idx[i], s.levels[i]);
                   },
               },
               base);
  }
  return values;
}

// Quantizes one base group and attaches the auxiliary terms for LFQ bases.
QuantOutput base_quantize(const Tensor& latent, const BaseQuantizerSpec& base, const char* who) {
  validate_base(base);
  Shape dims = pixel_dims(latent, base_channels(base), who);
  require_finite(latent, who);
  RawQuant raw = base_raw(latent.values(), base);
  QuantOutput out;
  out.grid = TokenGrid{std::move(dims), 1, std::move(raw.codes), QuantizerSpec{}};
  std::visit([&](const auto& s) { out.grid.quantizer = s; }, base);
  out.quantized = ops::straight_through(latent, std::move(raw.values));
  if (const auto* lfq = std::get_if<LfqSpec>(&base)) {
    out.aux["entropy"] = lfq_entropy_loss(latent, *lfq);
    out.aux["commitment"] = lfq_commitment_loss(latent, out.quantized);
  }
  return out;
}

void accumulate_aux(std::map<std::string, Tensor>& into, const std::map<std::string, Tensor>& from) {
  for (const auto& [name, value] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, value);
    } else {
      it->second = ops::add(it->second, value);
    }
  }
}

Shape with_channels(const Shape& dims, int c) {
  Shape s = dims;
  s.push_back(c);
  return s;
}

}  // namespace

void validate(const QuantizerSpec& spec) {
  std::visit(Overloaded{
                 [](const LfqSpec& s) { validate_base(s); },
                 [](const FsqSpec& s) { validate_base(s); },
                 [](const ChannelSplitSpec& s) {
                   validate_base(s.base);
                   if (s.splits < 1) fail(ErrorKind::kConfig, "channel split count must be >= 1");
                 },
                 [](const ResidualSpec& s) {
                   validate_base(s.base);
                   if (s.steps < 1) fail(ErrorKind::kConfig, "residual step count must be >= 1");
                 },
             },
             spec);
}

BaseQuantizerSpec base_of(const QuantizerSpec& spec) {
  return std::visit(Overloaded{
                        [](const LfqSpec& s) -> BaseQuantizerSpec { return s; },
                        [](const FsqSpec& s) -> BaseQuantizerSpec { return s; },
                        [](const ChannelSplitSpec& s) { return s.base; },
                        [](const ResidualSpec& s) { return s.base; },
                    },
                    spec);
}

bool is_lfq(const QuantizerSpec& spec) { return std::holds_alternative<LfqSpec>(base_of(spec)); }

int base_channels(const BaseQuantizerSpec& base) {
  return std::visit(Overloaded{
                        [](const LfqSpec& s) { return s.n_bits; },
                        [](const FsqSpec& s) { return static_cast<int>(s.levels.size()); },
                    },
                    base);
}

int required_channels(const QuantizerSpec& spec) {
  const int c = base_channels(base_of(spec));
  if (const auto* cs = std::get_if<ChannelSplitSpec>(&spec)) return c * cs->splits;
  return c;
}

int codes_per_pixel(const QuantizerSpec& spec) {
  if (const auto* cs = std::get_if<ChannelSplitSpec>(&spec)) return cs->splits;
  if (const auto* rq = std::get_if<ResidualSpec>(&spec)) return rq->steps;
  return 1;
}

std::uint64_t codebook_size(const BaseQuantizerSpec& base) {
  return std::visit(Overloaded{
                        [](const LfqSpec& s) { return std::uint64_t{1} << s.n_bits; },
                        [](const FsqSpec& s) {
                          std::uint64_t n = 1;
                          for (int l : s.levels) n *= static_cast<std::uint64_t>(l);
                          return n;
                        },
                    },
                    base);
}

int bits_per_code(const BaseQuantizerSpec& base) {
  const std::uint64_t size = codebook_size(base);
  int bits = 0;
  while ((std::uint64_t{1} << bits) < size) ++bits;
  return std::max(bits, 1);
}

std::string describe(const QuantizerSpec& spec) {
  auto base_name = [](const BaseQuantizerSpec& b) {
    return std::visit(Overloaded{
                          [](const LfqSpec& s) { return "LFQ[" + std::to_string(s.n_bits) + "]"; },
                          [](const FsqSpec& s) {
                            std::ostringstream os;
                            os << "FSQ[";
                            for (std::size_t i = 0; i < s.levels.size(); ++i) os << (i ? "," : "") << s.levels[i];
                            os << "]";
                            return os.str();
                          },
                      },
                      b);
  };
  return std::visit(Overloaded{
                        [&](const LfqSpec& s) { return base_name(s); },
                        [&](const FsqSpec& s) { return base_name(s); },
                        [&](const ChannelSplitSpec& s) {
                          return "CS-" + base_name(s.base) + "x" + std::to_string(s.splits);
                        },
                        [&](const ResidualSpec& s) { return "RQ-" + base_name(s.base) + "x" + std::to_string(s.steps); },
                    },
                    spec);
}

void TokenGrid::validate() const {
  for (int d : dims) {
    if (d < 0) fail(ErrorKind::kData, "token grid has negative extent " + shape_str(dims));
  }
  if (codes_per_pixel != dvtk::codes_per_pixel(quantizer)) {
    fail(ErrorKind::kData, "token grid codes_per_pixel " + std::to_string(codes_per_pixel) + " does not match quantizer " +
                               describe(quantizer));
  }
  if (static_cast<std::int64_t>(codes.size()) != token_count()) {
    fail(ErrorKind::kData, "token grid holds " + std::to_string(codes.size()) + " codes, expected " +
                               std::to_string(token_count()));
  }
  const std::uint64_t size = codebook_size(base_of(quantizer));
  for (std::uint32_t c : codes) {
    if (c >= size) fail(ErrorKind::kData, "code " + std::to_string(c) + " out of range [0, " + std::to_string(size) + ")");
  }
}

namespace quant {

std::uint32_t lfq_encode_pixel(std::span<const Scalar> v, std::span<Scalar> values) {
  std::uint32_t code = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool bit = v[i] > Scalar(0);
    values[i] = bit ? Scalar(1) : Scalar(-1);
    if (bit) code |= std::uint32_t{1} << i;
  }
  return code;
}

void lfq_decode_pixel(std::uint32_t code, std::span<Scalar> values) {
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = ((code >> i) & 1U) ? Scalar(1) : Scalar(-1);
}

int fsq_level_index(Scalar v, int levels) {
  const double half = 0.5 * (levels - 1);
  const double shift = (levels % 2 == 0) ? 0.5 : 0.0;
  const double bounded = half * std::tanh(static_cast<double>(v));
  const double value = std::round(bounded + shift) - shift;
  const int idx = static_cast<int>(std::lround(value + half));
  return std::clamp(idx, 0, levels - 1);
}

Scalar fsq_level_value(int index, int levels) { return static_cast<Scalar>(index - 0.5 * (levels - 1)); }

int fsq_value_index(Scalar value, int levels) {
  const double idx = static_cast<double>(value) + 0.5 * (levels - 1);
  const double r = std::round(idx);
  if (r != idx || r < 0 || r >= levels) return -1;
  return static_cast<int>(r);
}

std::uint32_t fsq_combine(std::span<const int> indices, std::span<const int> levels) {
  std::uint64_t code = 0;
  for (std::size_t i = 0; i < levels.size(); ++i) code = code * static_cast<std::uint64_t>(levels[i]) + indices[i];
  return static_cast<std::uint32_t>(code);
}

void fsq_split(std::uint32_t code, std::span<const int> levels, std::span<int> indices) {
  std::uint64_t rest = code;
  for (std::size_t i = levels.size(); i-- > 0;) {
    indices[i] = static_cast<int>(rest % static_cast<std::uint64_t>(levels[i]));
    rest /= static_cast<std::uint64_t>(levels[i]);
  }
}

std::uint64_t pack_tokens(std::span<const std::uint32_t> codes, int n_bits) {
  const std::size_t k = codes.size();
  if (n_bits < 1 || k < 1 || static_cast<std::size_t>(n_bits) * k > 64) {
    fail(ErrorKind::kConfig, "cannot pack " + std::to_string(k) + " codes of " + std::to_string(n_bits) + " bits into 64 bits");
  }
  const std::uint64_t limit = std::uint64_t{1} << n_bits;
  std::uint64_t packed = 0;
  for (std::uint32_t q : codes) {
    if (q >= limit) fail(ErrorKind::kData, "code " + std::to_string(q) + " does not fit in " + std::to_string(n_bits) + " bits");
    packed = (n_bits == 64 ? 0 : packed << n_bits) | q;
  }
  return packed;
}

std::vector<std::uint32_t> unpack_tokens(std::uint64_t packed, int n_bits, int count) {
  if (n_bits < 1 || count < 1 || n_bits * count > 64) {
    fail(ErrorKind::kConfig, "cannot unpack " + std::to_string(count) + " codes of " + std::to_string(n_bits) + " bits");
  }
  const int total = n_bits * count;
  if (total < 64 && packed >= (std::uint64_t{1} << total)) {
    fail(ErrorKind::kData, "packed id " + std::to_string(packed) + " exceeds 2^" + std::to_string(total));
  }
  const std::uint64_t mask = (std::uint64_t{1} << n_bits) - 1;
  std::vector<std::uint32_t> codes(static_cast<std::size_t>(count));
  for (int i = count; i-- > 0;) {
    codes[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(packed & mask);
    packed >>= n_bits;
  }
  return codes;
}

}  // namespace quant

QuantOutput lfq_quantize(const Tensor& latent, const LfqSpec& spec) { return base_quantize(latent, spec, "lfq_quantize"); }

QuantOutput fsq_quantize(const Tensor& latent, const FsqSpec& spec) { return base_quantize(latent, spec, "fsq_quantize"); }

QuantOutput channel_split_quantize(const Tensor& latent, const ChannelSplitSpec& spec) {
  validate(spec);
  const int c = base_channels(spec.base);
  const int k = spec.splits;
  Shape dims = pixel_dims(latent, c * k, "channel_split_quantize");
  if (k == 1) {
    QuantOutput out = base_quantize(latent, spec.base, "channel_split_quantize");
    out.grid.quantizer = spec;
    return out;
  }
  require_finite(latent, "channel_split_quantize");
  const std::size_t pixels = static_cast<std::size_t>(shape_numel(dims));
  QuantOutput out;
  out.grid = TokenGrid{dims, k, std::vector<std::uint32_t>(pixels * k), spec};
  std::vector<Tensor> parts;
  for (int s = 0; s < k; ++s) {
    QuantOutput part = base_quantize(ops::slice(latent, -1, s * c, (s + 1) * c), spec.base, "channel_split_quantize");
    for (std::size_t p = 0; p < pixels; ++p) out.grid.codes[p * k + s] = part.grid.codes[p];
    parts.push_back(part.quantized);
    accumulate_aux(out.aux, part.aux);
  }
  out.quantized = ops::concat(parts, -1);
  return out;
}

QuantOutput residual_quantize(const Tensor& latent, const ResidualSpec& spec) {
  validate(spec);
  const int c = base_channels(spec.base);
  const int r = spec.steps;
  Shape dims = pixel_dims(latent, c, "residual_quantize");
  if (r == 1) {
    QuantOutput out = base_quantize(latent, spec.base, "residual_quantize");
    out.grid.quantizer = spec;
    return out;
  }
  require_finite(latent, "residual_quantize");
  const std::size_t pixels = static_cast<std::size_t>(shape_numel(dims));
  QuantOutput out;
  out.grid = TokenGrid{dims, r, std::vector<std::uint32_t>(pixels * r), spec};
  Buffer total(latent.values().size(), Scalar(0));
  Tensor residual = latent;
  for (int s = 0; s < r; ++s) {
    QuantOutput step = base_quantize(residual, spec.base, "residual_quantize");
    for (std::size_t p = 0; p < pixels; ++p) out.grid.codes[p * r + s] = step.grid.codes[p];
    const auto q = step.quantized.values();
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += q[i];
    accumulate_aux(out.aux, step.aux);
    residual = ops::sub(latent, Tensor(latent.shape(), total));
  }
  out.quantized = ops::straight_through(latent, std::move(total));
  return out;
}

QuantOutput quantize(const Tensor& latent, const QuantizerSpec& spec) {
  return std::visit(Overloaded{
                        [&](const LfqSpec& s) { return lfq_quantize(latent, s); },
                        [&](const FsqSpec& s) { return fsq_quantize(latent, s); },
                        [&](const ChannelSplitSpec& s) { return channel_split_quantize(latent, s); },
                        [&](const ResidualSpec& s) { return residual_quantize(latent, s); },
                    },
                    spec);
}

Tensor lfq_decode(const TokenGrid& grid, const LfqSpec& spec) {
  validate_base(spec);
  if (grid.codes_per_pixel != 1 || static_cast<std::int64_t>(grid.codes.size()) != grid.pixels()) {
    fail(ErrorKind::kData, "lfq_decode expects one code per pixel");
  }
  return Tensor(with_channels(grid.dims, spec.n_bits), base_decode_values(grid.codes, 1, 0, spec));
}

Tensor fsq_decode(const TokenGrid& grid, const FsqSpec& spec) {
  validate_base(spec);
  if (grid.codes_per_pixel != 1 || static_cast<std::int64_t>(grid.codes.size()) != grid.pixels()) {
    fail(ErrorKind::kData, "fsq_decode expects one code per pixel");
  }
  return Tensor(with_channels(grid.dims, static_cast<int>(spec.levels.size())),
                base_decode_values(grid.codes, 1, 0, spec));
}

Tensor dequantize(const TokenGrid& grid) {
  validate(grid.quantizer);
  grid.validate();
  const BaseQuantizerSpec base = base_of(grid.quantizer);
  const int c = base_channels(base);
  const std::size_t k = static_cast<std::size_t>(grid.codes_per_pixel);
  const std::size_t pixels = static_cast<std::size_t>(grid.pixels());
  if (std::holds_alternative<ResidualSpec>(grid.quantizer)) {
    Buffer total(pixels * c, Scalar(0));
    for (std::size_t s = 0; s < k; ++s) {
      const auto part = base_decode_values(grid.codes, k, s, base);
      for (std::size_t i = 0; i < total.size(); ++i) total[i] += part[i];
    }
    return Tensor(with_channels(grid.dims, c), std::move(total));
  }
  Buffer out(pixels * k * c);
  for (std::size_t s = 0; s < k; ++s) {
    const auto part = base_decode_values(grid.codes, k, s, base);
    for (std::size_t p = 0; p < pixels; ++p) {
      std::copy_n(part.begin() + p * c, c, out.begin() + (p * k + s) * c);
    }
  }
  return Tensor(with_channels(grid.dims, static_cast<int>(k) * c), std::move(out));
}

Tensor representative_latent(const TokenGrid& grid) {
  if (std::holds_alternative<ResidualSpec>(grid.quantizer)) {
    fail(ErrorKind::kConfig, "residual token grids have no canonical latent pre-image");
  }
  Tensor values = dequantize(grid);
  const BaseQuantizerSpec base = base_of(grid.quantizer);
  if (!std::holds_alternative<FsqSpec>(base)) return values;
  const FsqSpec& spec = std::get<FsqSpec>(base);
  const std::size_t m = spec.levels.size();
  Buffer v(values.values().begin(), values.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const int levels = spec.levels[i % m];
    const double half = 0.5 * (levels - 1);
    double bounded = v[i];
    // tanh never reaches the end points; aim a quarter step inside them.
    if (bounded >= half) bounded = half - 0.25;
    if (bounded <= -half) bounded = -half + 0.25;
    v[i] = static_cast<Scalar>(std::atanh(bounded / half));
  }
  return Tensor(values.shape(), std::move(v));
}

LfqEntropyTerms lfq_entropy_terms(const Tensor& pre_quantized, const LfqSpec& spec, Scalar temperature) {
  Shape dims = pixel_dims(pre_quantized, spec.n_bits, "lfq_entropy_loss");
  if (!(temperature > Scalar(0))) fail(ErrorKind::kConfig, "entropy temperature must be positive");
  const std::int64_t pixels = shape_numel(dims);
  if (pixels == 0) fail(ErrorKind::kShape, "lfq_entropy_loss: empty latent");
  const Scalar inv_pixels = Scalar(1) / static_cast<Scalar>(pixels);
  const Tensor p = ops::sigmoid(ops::scale(pre_quantized, Scalar(1) / temperature));
  LfqEntropyTerms t;
  t.per_sample = ops::scale(ops::sum(ops::binary_entropy(p)), inv_pixels);
  t.batch = ops::sum(ops::binary_entropy(ops::scale(ops::sum_leading(p), inv_pixels)));
  t.loss = ops::sub(t.per_sample, t.batch);
  return t;
}

Tensor lfq_entropy_loss(const Tensor& pre_quantized, const LfqSpec& spec, Scalar temperature) {
  return lfq_entropy_terms(pre_quantized, spec, temperature).loss;
}

Tensor lfq_commitment_loss(const Tensor& pre_quantized, const Tensor& quantized) {
  if (pre_quantized.shape() != quantized.shape()) {
    fail(ErrorKind::kConfig, "commitment loss shapes differ: " + shape_str(pre_quantized.shape()) + " vs " +
                                 shape_str(quantized.shape()));
  }
  return ops::mean(ops::square(ops::sub(pre_quantized, quantized.detach())));
}

CodebookUsage codebook_usage(const TokenGrid& grid) {
  CodebookUsage u;
  u.codebook_size = codebook_size(base_of(grid.quantizer));
  for (std::uint32_t c : grid.codes) ++u.counts[c];
  u.total = grid.codes.size();
  if (u.total == 0) return u;
  u.used_fraction = static_cast<double>(u.counts.size()) / static_cast<double>(u.codebook_size);
  double h = 0;
  for (const auto& [code, n] : u.counts) {
    const double p = static_cast<double>(n) / static_cast<double>(u.total);
    h -= p * std::log(p);
  }
  u.perplexity = std::exp(h);
  return u;
}

DVTK_NAMESPACE_END
