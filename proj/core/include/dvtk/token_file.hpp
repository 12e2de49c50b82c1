#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "dvtk/backbone.hpp"

DVTK_NAMESPACE_BEGIN

inline constexpr char kTokenMagic[4] = {'D', 'V', 'T', 'K'};
inline constexpr std::uint16_t kTokenFormatVersion = 1;

/// Binary token container:
///   "DVTK" | u16 version | u32 header length | JSON header | u32 ids
/// All integers little-endian. Ids run over (t', h', w') row-major with the
/// codes of one pixel contiguous, split/step index innermost. With `packed`
/// set (channel-split LFQ with N*K <= 32 only) each pixel stores a single
/// packed id instead of K codes.
struct TokenFile {
  TokenGrid grid;
  Shape video_dims;          // [T, H, W, C] of the encoded clip
  KernelTriplet compression;
  std::string config_hash;
  bool packed = false;

  bool operator==(const TokenFile&) const = default;
};

/// True when grids of `spec` can be stored one packed id per pixel.
bool packable(const QuantizerSpec& spec);

std::string serialize_token_file(const TokenFile& file);
/// Bad magic or header is a format error; short or oversized payloads and
/// out-of-range ids are data errors.
TokenFile parse_token_file(std::string_view bytes);

void write_token_file(const std::filesystem::path& path, const TokenFile& file);
TokenFile read_token_file(const std::filesystem::path& path);

DVTK_NAMESPACE_END
