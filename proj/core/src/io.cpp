#include "dvtk/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

DVTK_NAMESPACE_BEGIN

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kRuntime, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kRuntime, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      fail(ErrorKind::kRuntime, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kRuntime, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

namespace le {

namespace {
template <class T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
}  // namespace

void put_u16(std::string& out, std::uint16_t v) { put(out, v); }
void put_u32(std::string& out, std::uint32_t v) { put(out, v); }
void put_u64(std::string& out, std::uint64_t v) { put(out, v); }

std::string_view Reader::take(std::size_t n) {
  if (n > remaining()) {
    fail(ErrorKind::kData, what_ + " truncated: needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                               ", " + std::to_string(remaining()) + " left");
  }
  const auto s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint16_t Reader::u16() {
  const auto s = take(2);
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[0]) | static_cast<unsigned char>(s[1]) << 8);
}

std::uint32_t Reader::u32() {
  const auto s = take(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = v << 8 | static_cast<unsigned char>(s[i]);
  return v;
}

std::uint64_t Reader::u64() {
  const auto s = take(8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = v << 8 | static_cast<unsigned char>(s[i]);
  return v;
}

}  // namespace le

void write_video(const std::filesystem::path& path, const Tensor& video) {
  if (video.rank() != 4) fail(ErrorKind::kShape, "write_video expects [T, H, W, C], got " + shape_str(video.shape()));
  const int T = video.dim(0), H = video.dim(1), W = video.dim(2), C = video.dim(3);
  const auto v = video.values();
  const std::size_t plane = static_cast<std::size_t>(T) * H * W;
  std::string bytes;
  bytes.reserve(plane * C * 4);
  for (int c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      const float f = static_cast<float>(v[p * C + c]);
      le::put_u32(bytes, std::bit_cast<std::uint32_t>(f));
    }
  }
  const nlohmann::json sidecar = {{"layout", "planar_f32le"}, {"frames", T}, {"height", H}, {"width", W}, {"channels", C}};
  write_file_atomic(path, bytes);
  write_file_atomic(path.string() + ".json", sidecar.dump(2) + "\n");
}

Tensor read_video(const std::filesystem::path& path) {
  const std::filesystem::path meta_path = path.string() + ".json";
  if (!std::filesystem::exists(meta_path)) fail(ErrorKind::kData, "missing video sidecar " + meta_path.string());
  nlohmann::json meta;
  int T = 0, H = 0, W = 0, C = 0;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
    if (meta.at("layout") != "planar_f32le") fail(ErrorKind::kFormat, "unsupported video layout in " + meta_path.string());
    T = meta.at("frames").get<int>();
    H = meta.at("height").get<int>();
    W = meta.at("width").get<int>();
    C = meta.at("channels").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "malformed video sidecar " + meta_path.string() + ": " + e.what());
  }
  if (T < 1 || H < 1 || W < 1 || C < 1) fail(ErrorKind::kData, "non-positive video dims in " + meta_path.string());
  const std::size_t plane = static_cast<std::size_t>(T) * H * W;
  const std::string bytes = read_file(path);
  if (bytes.size() != plane * C * 4) {
    fail(ErrorKind::kData, path.string() + " holds " + std::to_string(bytes.size()) + " bytes, dims need " +
                               std::to_string(plane * C * 4));
  }
  le::Reader r(bytes, path.string());
  Buffer out(plane * C);
  for (int c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      const float f = std::bit_cast<float>(r.u32());
      if (!std::isfinite(f)) fail(ErrorKind::kInput, path.string() + " contains a non-finite sample");
      out[p * C + c] = static_cast<Scalar>(f);
    }
  }
  return Tensor({T, H, W, C}, std::move(out));
}

DVTK_NAMESPACE_END
