#pragma once

// Tensor files and PGM/PPM images.
//
// Tensor file layout: "TDPTENS1", u32 ndim, ndim x u32 dims, then the
// payload as f32, everything little-endian, row-major.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"
#include "timemap.hpp"

namespace tdpaint {

namespace fs = std::filesystem;

inline constexpr std::array<char, 8> kTensorMagic = {'T', 'D', 'P', 'T', 'E', 'N', 'S', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string(), "read failed");
  return bytes;
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(path.parent_path().string(), "cannot create directory: " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * t.numel());
  for (float v : t.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Tensor decode_tensor(const std::string& bytes, const std::string& source = "<memory>") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, kTensorMagic.data(), 8) != 0)
    throw IoError(source, "not a tensor file (bad magic)");
  const std::uint32_t ndim = detail::get_u32(p + 8);
  if (bytes.size() < 12 + 4ull * ndim) throw IoError(source, "truncated tensor header");
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = detail::get_u32(p + 12 + 4 * i);
    if (d > static_cast<std::uint32_t>(INT32_MAX)) throw IoError(source, "dimension too large");
    shape.push_back(static_cast<int>(d));
    count *= d;
  }
  const std::size_t offset = 12 + 4ull * ndim;
  if (bytes.size() != offset + 4 * count)
    throw IoError(source, "payload size " + std::to_string(bytes.size() - offset) + " does not match shape " +
                              shape_string(shape));
  std::vector<float> data(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(detail::get_u32(p + offset + 4 * i));
  return Tensor(std::move(shape), std::move(data));
}

inline void write_tensor(const fs::path& path, const Tensor& t) { detail::write_file(path, encode_tensor(t)); }

inline Tensor read_tensor(const fs::path& path) { return decode_tensor(detail::read_file(path), path.string()); }

/// [-1, 1] -> {0..255}: round((v + 1) / 2 * 255), clamped.
inline std::uint8_t quantize(float v) {
  const double q = std::round((static_cast<double>(v) + 1.0) / 2.0 * 255.0);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

/// {0..255} -> [-1, 1]: q / 255 * 2 - 1. quantize(dequantize(q)) == q.
inline float dequantize(std::uint8_t q) { return static_cast<float>(q / 255.0 * 2.0 - 1.0); }

/// Binary PGM (1 channel) or PPM (3 channels).
inline std::string encode_pnm(const Tensor& img) {
  require_image(img, "encode_pnm");
  const int c = channels(img), h = height(img), w = width(img);
  if (c != 1 && c != 3) throw std::invalid_argument("PGM/PPM needs 1 or 3 channels, got " + std::to_string(c));
  std::string out = (c == 1 ? "P5\n" : "P6\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < plane; ++p)
    for (int ch = 0; ch < c; ++ch) out.push_back(static_cast<char>(quantize(img[ch * plane + p])));
  return out;
}

namespace detail {

struct PnmHeader {
  int channels = 0, width = 0, height = 0, maxval = 0;
  std::size_t offset = 0;
};

inline PnmHeader parse_pnm_header(const std::string& bytes, const std::string& source) {
  PnmHeader h;
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw IoError(source, "not a binary PGM/PPM (expected P5 or P6)");
  h.channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  int fields[3] = {0, 0, 0};
  for (int& field : fields) {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw IoError(source, "malformed PGM/PPM header");
    field = std::stoi(bytes.substr(start, pos - start));
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw IoError(source, "malformed PGM/PPM header");
  h.width = fields[0];
  h.height = fields[1];
  h.maxval = fields[2];
  h.offset = pos + 1;
  if (h.width < 1 || h.height < 1) throw IoError(source, "empty image");
  if (h.maxval != 255) throw IoError(source, "only maxval 255 is supported");
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * h.channels;
  if (bytes.size() - h.offset != need) throw IoError(source, "pixel data size does not match header");
  return h;
}

}  // namespace detail

inline Tensor decode_pnm(const std::string& bytes, const std::string& source = "<memory>") {
  const auto h = detail::parse_pnm_header(bytes, source);
  Tensor img(Shape{h.channels, h.height, h.width});
  const std::size_t plane = static_cast<std::size_t>(h.height) * h.width;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.offset);
  for (std::size_t i = 0; i < plane; ++i)
    for (int ch = 0; ch < h.channels; ++ch) img[ch * plane + i] = dequantize(p[i * h.channels + ch]);
  return img;
}

inline void write_pnm(const fs::path& path, const Tensor& img) { detail::write_file(path, encode_pnm(img)); }

inline Tensor read_pnm(const fs::path& path) { return decode_pnm(detail::read_file(path), path.string()); }

/// Mask as PGM: known = 255, unknown = 0.
inline void write_mask_pgm(const fs::path& path, const Mask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  for (auto v : mask.values) out.push_back(static_cast<char>(v ? 255 : 0));
  detail::write_file(path, out);
}

/// Reads a mask PGM; pixels >= 128 are known.
inline Mask read_mask_pgm(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  const auto h = detail::parse_pnm_header(bytes, path.string());
  if (h.channels != 1) throw IoError(path.string(), "mask must be a single-channel PGM");
  Mask m;
  m.height = h.height;
  m.width = h.width;
  m.values.resize(static_cast<std::size_t>(h.height) * h.width);
  for (std::size_t i = 0; i < m.values.size(); ++i)
    m.values[i] = static_cast<unsigned char>(bytes[h.offset + i]) >= 128 ? 1 : 0;
  return m;
}

/// Reads an image by extension: .pgm/.ppm, otherwise a tensor file.
inline Tensor read_image(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pgm" || ext == ".ppm") return read_pnm(path);
  return read_tensor(path);
}

}  // namespace tdpaint
