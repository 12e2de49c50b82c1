#include "dvtk/token_file.hpp"

#include <cstring>

#include "dvtk/config.hpp"
#include "dvtk/io.hpp"

DVTK_NAMESPACE_BEGIN

namespace {

using nlohmann::json;

int packed_bits(const QuantizerSpec& spec) {
  const auto* cs = std::get_if<ChannelSplitSpec>(&spec);
  if (!cs) return 0;
  const auto* lfq = std::get_if<LfqSpec>(&cs->base);
  if (!lfq) return 0;
  return lfq->n_bits;
}

}  // namespace

bool packable(const QuantizerSpec& spec) {
  const int n = packed_bits(spec);
  if (n == 0) return false;
  return n * std::get<ChannelSplitSpec>(spec).splits <= 32;
}

std::string serialize_token_file(const TokenFile& file) {
  const TokenGrid& g = file.grid;
  g.validate();
  if (file.packed && !packable(g.quantizer)) {
    fail(ErrorKind::kConfig, "packed ids need a channel-split LFQ quantizer with at most 32 bits per pixel, got " +
                                 describe(g.quantizer));
  }
  const json header = {{"quantizer", to_json(g.quantizer)},
                       {"codes_per_pixel", g.codes_per_pixel},
                       {"grid", g.dims},
                       {"video", file.video_dims},
                       {"compression", {file.compression.t, file.compression.h, file.compression.w}},
                       {"config_hash", file.config_hash},
                       {"packed", file.packed}};
  const std::string text = header.dump();
  std::string out(kTokenMagic, 4);
  le::put_u16(out, kTokenFormatVersion);
  le::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto K = static_cast<std::size_t>(g.codes_per_pixel);
  if (file.packed) {
    const int n = packed_bits(g.quantizer);
    for (std::size_t p = 0; p * K < g.codes.size(); ++p) {
      const std::span<const std::uint32_t> codes(g.codes.data() + p * K, K);
      le::put_u32(out, static_cast<std::uint32_t>(quant::pack_tokens(codes, n)));
    }
  } else {
    for (std::uint32_t c : g.codes) le::put_u32(out, c);
  }
  return out;
}

TokenFile parse_token_file(std::string_view bytes) {
  le::Reader r(bytes, "token file");
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTokenMagic, 4) != 0) {
    fail(ErrorKind::kFormat, "not a token file: bad magic");
  }
  r.take(4);
  const std::uint16_t version = r.u16();
  if (version != kTokenFormatVersion) {
    fail(ErrorKind::kFormat, "unsupported token file version " + std::to_string(version));
  }
  const std::uint32_t header_len = r.u32();
  const std::string_view text = r.take(header_len);

  TokenFile file;
  TokenGrid& g = file.grid;
  try {
    const json h = json::parse(text);
    g.quantizer = quantizer_from_json(h.at("quantizer"));
    g.codes_per_pixel = h.at("codes_per_pixel").get<int>();
    g.dims = h.at("grid").get<Shape>();
    file.video_dims = h.at("video").get<Shape>();
    const auto c = h.at("compression").get<std::array<int, 3>>();
    file.compression = {c[0], c[1], c[2]};
    file.config_hash = h.at("config_hash").get<std::string>();
    file.packed = h.at("packed").get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed token file header: ") + e.what());
  }
  if (g.codes_per_pixel != codes_per_pixel(g.quantizer)) {
    fail(ErrorKind::kFormat, "token file header: codes_per_pixel " + std::to_string(g.codes_per_pixel) + " disagrees with " +
                                 describe(g.quantizer));
  }
  for (int d : g.dims) {
    if (d < 0) fail(ErrorKind::kFormat, "token file header: negative grid extent");
  }
  if (file.packed && !packable(g.quantizer)) fail(ErrorKind::kFormat, "token file header: packed flag on unpackable quantizer");

  const auto pixels = static_cast<std::uint64_t>(g.pixels());
  const auto K = static_cast<std::uint64_t>(g.codes_per_pixel);
  const std::uint64_t ids = file.packed ? pixels : pixels * K;
  if (r.remaining() != ids * 4) {
    fail(ErrorKind::kData, "token file payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
                               std::to_string(ids * 4));
  }
  g.codes.reserve(pixels * K);
  if (file.packed) {
    const int n = packed_bits(g.quantizer);
    for (std::uint64_t p = 0; p < pixels; ++p) {
      const std::uint32_t id = r.u32();
      if (n * static_cast<int>(K) < 32 && (id >> (n * K)) != 0) {
        fail(ErrorKind::kData, "packed token id " + std::to_string(id) + " out of range");
      }
      const auto codes = quant::unpack_tokens(id, n, static_cast<int>(K));
      g.codes.insert(g.codes.end(), codes.begin(), codes.end());
    }
  } else {
    for (std::uint64_t i = 0; i < ids; ++i) g.codes.push_back(r.u32());
  }
  g.validate();
  return file;
}

void write_token_file(const std::filesystem::path& path, const TokenFile& file) {
  write_file_atomic(path, serialize_token_file(file));
}

TokenFile read_token_file(const std::filesystem::path& path) { return parse_token_file(read_file(path)); }

DVTK_NAMESPACE_END
