#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dvtk/tensor.hpp"

DVTK_NAMESPACE_BEGIN

/// Lookup-free quantization: every channel becomes one sign bit.
struct LfqSpec {
  int n_bits = 1;
  bool operator==(const LfqSpec&) const = default;
};

/// Finite scalar quantization with an implicit product codebook.
struct FsqSpec {
  std::vector<int> levels;
  bool operator==(const FsqSpec&) const = default;
};

using BaseQuantizerSpec = std::variant<LfqSpec, FsqSpec>;

/// Splits the latent into `splits` contiguous channel groups, each quantized
/// independently by `base`; every latent pixel becomes an ordered sequence of
/// `splits` tokens.
struct ChannelSplitSpec {
  BaseQuantizerSpec base;
  int splits = 1;
  bool operator==(const ChannelSplitSpec&) const = default;
};

/// Quantizes the running residual `steps` times and sums the parts.
struct ResidualSpec {
  BaseQuantizerSpec base;
  int steps = 1;
  bool operator==(const ResidualSpec&) const = default;
};

using QuantizerSpec = std::variant<LfqSpec, FsqSpec, ChannelSplitSpec, ResidualSpec>;

void validate(const QuantizerSpec& spec);
BaseQuantizerSpec base_of(const QuantizerSpec& spec);
bool is_lfq(const QuantizerSpec& spec);
int base_channels(const BaseQuantizerSpec& base);
/// Latent channel count the quantizer consumes (c * K for channel split).
int required_channels(const QuantizerSpec& spec);
/// Tokens emitted per latent pixel (K for channel split, r for residual).
int codes_per_pixel(const QuantizerSpec& spec);
std::uint64_t codebook_size(const BaseQuantizerSpec& base);
/// Bits needed to hold one base code: ceil(log2(codebook size)).
int bits_per_code(const BaseQuantizerSpec& base);
/// Human-readable label such as "CS-FSQ[8,8,8,5,5,5]x2".
std::string describe(const QuantizerSpec& spec);

/// Integer code volume with the quantizer that produced it.
///
/// `dims` are the pixel axes of the latent (for a single video T'xH'xW').
/// Codes are row-major over the pixel axes with the `codes_per_pixel` codes
/// of a pixel contiguous, split (or residual step) index innermost.
struct TokenGrid {
  Shape dims;
  int codes_per_pixel = 1;
  std::vector<std::uint32_t> codes;
  QuantizerSpec quantizer = LfqSpec{};

  std::int64_t pixels() const { return shape_numel(dims); }
  std::int64_t token_count() const { return pixels() * codes_per_pixel; }
  /// Throws a data error if sizes disagree or a code is out of range.
  void validate() const;
  bool operator==(const TokenGrid&) const = default;
};

struct QuantOutput {
  Tensor quantized;                   // latent-shaped, straight-through to the input
  TokenGrid grid;
  std::map<std::string, Tensor> aux;  // "entropy", "commitment" for LFQ bases
};

namespace quant {

/// Sign-quantizes one pixel; channel 0 is the least significant bit.
std::uint32_t lfq_encode_pixel(std::span<const Scalar> v, std::span<Scalar> values);
void lfq_decode_pixel(std::uint32_t code, std::span<Scalar> values);

/// Level index in [0, levels) of round((L-1)/2 * tanh(v) + s) - s, where the
/// shift s is 1/2 for even L and 0 for odd L.
int fsq_level_index(Scalar v, int levels);
/// Grid value of a level index: index - (L-1)/2.
Scalar fsq_level_value(int index, int levels);
/// Exact inverse of fsq_level_value; -1 if `value` is not a grid point.
int fsq_value_index(Scalar value, int levels);
/// Mixed-radix combination, channel 0 most significant.
std::uint32_t fsq_combine(std::span<const int> indices, std::span<const int> levels);
void fsq_split(std::uint32_t code, std::span<const int> levels, std::span<int> indices);

/// q_1 * 2^(N(K-1)) + ... + q_K over 0-indexed codes; a bijection onto [0, 2^(NK)).
std::uint64_t pack_tokens(std::span<const std::uint32_t> codes, int n_bits);
std::vector<std::uint32_t> unpack_tokens(std::uint64_t packed, int n_bits, int count);

}  // namespace quant

QuantOutput lfq_quantize(const Tensor& latent, const LfqSpec& spec);
QuantOutput fsq_quantize(const Tensor& latent, const FsqSpec& spec);
QuantOutput channel_split_quantize(const Tensor& latent, const ChannelSplitSpec& spec);
QuantOutput residual_quantize(const Tensor& latent, const ResidualSpec& spec);
QuantOutput quantize(const Tensor& latent, const QuantizerSpec& spec);

Tensor lfq_decode(const TokenGrid& grid, const LfqSpec& spec);
Tensor fsq_decode(const TokenGrid& grid, const FsqSpec& spec);
/// Latent the decoder consumes for `grid`: the grid values (summed over
/// steps for residual grids).
Tensor dequantize(const TokenGrid& grid);

/// A latent whose quantization reproduces `grid` exactly. LFQ grid values
/// are their own pre-image; FSQ values are mapped back through the bound to
/// the centre of their rounding cell. Residual grids have no canonical
/// pre-image and are rejected.
Tensor representative_latent(const TokenGrid& grid);

struct LfqEntropyTerms {
  Tensor per_sample;  // mean over pixels of the code entropy of each pixel
  Tensor batch;       // entropy of the mean code distribution over pixels
  Tensor loss;        // per_sample - batch
};

/// Entropy penalty on sigmoid(v / temperature) soft bit assignments,
/// factorised per channel.
LfqEntropyTerms lfq_entropy_terms(const Tensor& pre_quantized, const LfqSpec& spec, Scalar temperature = Scalar(1));
Tensor lfq_entropy_loss(const Tensor& pre_quantized, const LfqSpec& spec, Scalar temperature = Scalar(1));
/// mean((pre - stopgrad(quantized))^2).
Tensor lfq_commitment_loss(const Tensor& pre_quantized, const Tensor& quantized);

struct CodebookUsage {
  std::map<std::uint32_t, std::uint64_t> counts;
  std::uint64_t total = 0;
  std::uint64_t codebook_size = 0;
  double used_fraction = 0;  // distinct codes / codebook size
  double perplexity = 1;     // exp(entropy of empirical usage)
};

CodebookUsage codebook_usage(const TokenGrid& grid);

DVTK_NAMESPACE_END
