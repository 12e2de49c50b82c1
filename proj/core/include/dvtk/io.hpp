#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "dvtk/tensor.hpp"

DVTK_NAMESPACE_BEGIN

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file, then renames it over `path`, so a
/// failed write never clobbers an existing file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

namespace le {

void put_u16(std::string& out, std::uint16_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);

/// Sequential little-endian reader; running past the end is a data error
/// naming `what`.
class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  std::string_view take(std::size_t n);
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace le

/// Raw video file: planar float32 little-endian samples, channel-major
/// ([C][T][H][W]), next to a JSON sidecar "<path>.json" holding the dims.
void write_video(const std::filesystem::path& path, const Tensor& video);
/// Returns [T, H, W, C].
Tensor read_video(const std::filesystem::path& path);

DVTK_NAMESPACE_END
