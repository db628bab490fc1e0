#pragma once

// Minimal PNG codec on zlib: writes 8-bit RGB and 16-bit grayscale, reads
// non-interlaced 8-bit gray/RGB/RGBA. Covers exactly the formats this project
// produces and ingests.

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "campari/tensor.hpp"

namespace campari {

class ImageIoError : public std::runtime_error {
 public:
  explicit ImageIoError(const std::string& m) : std::runtime_error(m) {}
};

namespace detail {

inline void png_put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>(v & 0xff));
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  png_put_u32(out, static_cast<uint32_t>(data.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uint32_t crc = static_cast<uint32_t>(
      ::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
  png_put_u32(out, crc);
}

inline std::vector<uint8_t> zlib_compress(const std::vector<uint8_t>& raw) {
  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> out(bound);
  if (::compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw ImageIoError("png: zlib compression failed");
  out.resize(bound);
  return out;
}

inline std::vector<uint8_t> zlib_decompress(const uint8_t* data, size_t size, size_t expected) {
  std::vector<uint8_t> out(expected);
  uLongf dest_len = static_cast<uLongf>(expected);
  const int rc = ::uncompress(out.data(), &dest_len, data, static_cast<uLong>(size));
  if (rc != Z_OK || dest_len != expected) throw ImageIoError("png: zlib decompression failed");
  return out;
}

inline std::vector<uint8_t> png_container(uint32_t w, uint32_t h, uint8_t bit_depth, uint8_t color_type,
                                          const std::vector<uint8_t>& scanlines) {
  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  png_put_u32(ihdr, w);
  png_put_u32(ihdr, h);
  ihdr.push_back(bit_depth);
  ihdr.push_back(color_type);
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // no interlace
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", zlib_compress(scanlines));
  png_chunk(out, "IEND", {});
  return out;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw ImageIoError("png: cannot open " + path + " for writing");
  const size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw ImageIoError("png: short write to " + path);
}

}  // namespace detail

// rgb: [H,W,3] values in [0,1], written as 8-bit RGB.
inline void write_png_rgb(const std::string& path, const Tensor& rgb) {
  if (rgb.ndim() != 3 || rgb.dim(2) != 3) throw ImageIoError("png: expected [H,W,3] tensor");
  const int64_t h = rgb.dim(0), w = rgb.dim(1);
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(h * (1 + w * 3)));
  const float* p = rgb.data();
  for (int64_t y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    for (int64_t x = 0; x < w * 3; ++x) {
      float v = p[y * w * 3 + x];
      v = std::min(std::max(v, 0.0f), 1.0f);
      raw.push_back(static_cast<uint8_t>(std::lround(v * 255.0f)));
    }
  }
  detail::write_file(path, detail::png_container(static_cast<uint32_t>(w), static_cast<uint32_t>(h),
                                                 8, 2, raw));
}

// gray: [H,W] arbitrary range scaled by (lo, hi) into 16-bit grayscale.
inline void write_png_gray16(const std::string& path, const Tensor& gray, float lo, float hi) {
  if (gray.ndim() != 2) throw ImageIoError("png: expected [H,W] tensor");
  const int64_t h = gray.dim(0), w = gray.dim(1);
  const float span = hi > lo ? hi - lo : 1.0f;
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(h * (1 + w * 2)));
  const float* p = gray.data();
  for (int64_t y = 0; y < h; ++y) {
    raw.push_back(0);
    for (int64_t x = 0; x < w; ++x) {
      float v = (p[y * w + x] - lo) / span;
      v = std::min(std::max(v, 0.0f), 1.0f);
      const uint16_t q = static_cast<uint16_t>(std::lround(v * 65535.0f));
      raw.push_back(static_cast<uint8_t>(q >> 8));
      raw.push_back(static_cast<uint8_t>(q & 0xff));
    }
  }
  detail::write_file(path, detail::png_container(static_cast<uint32_t>(w), static_cast<uint32_t>(h),
                                                 16, 0, raw));
}

// Reads an 8-bit gray/RGB/RGBA PNG into [H,W,3] in [0,1].
inline Tensor read_png_rgb(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw ImageIoError("png: cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(size));
  const size_t got = std::fread(buf.data(), 1, buf.size(), f);
  std::fclose(f);
  if (got != buf.size()) throw ImageIoError("png: short read from " + path);

  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
    throw ImageIoError("png: bad signature in " + path);

  auto read_u32 = [&](size_t at) {
    return (static_cast<uint32_t>(buf[at]) << 24) | (static_cast<uint32_t>(buf[at + 1]) << 16) |
           (static_cast<uint32_t>(buf[at + 2]) << 8) | static_cast<uint32_t>(buf[at + 3]);
  };

  uint32_t w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  size_t at = 8;
  while (at + 8 <= buf.size()) {
    const uint32_t len = read_u32(at);
    const std::string type(reinterpret_cast<const char*>(buf.data() + at + 4), 4);
    const size_t data_at = at + 8;
    if (data_at + len + 4 > buf.size()) throw ImageIoError("png: truncated chunk in " + path);
    if (type == "IHDR") {
      w = read_u32(data_at);
      h = read_u32(data_at + 4);
      bit_depth = buf[data_at + 8];
      color_type = buf[data_at + 9];
      if (buf[data_at + 12] != 0) throw ImageIoError("png: interlaced images unsupported: " + path);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), buf.begin() + static_cast<long>(data_at),
                  buf.begin() + static_cast<long>(data_at + len));
    } else if (type == "IEND") {
      break;
    }
    at = data_at + len + 4;
  }
  if (w == 0 || h == 0) throw ImageIoError("png: missing IHDR in " + path);
  if (bit_depth != 8) throw ImageIoError("png: only 8-bit reads supported: " + path);
  int channels;
  switch (color_type) {
    case 0: channels = 1; break;
    case 2: channels = 3; break;
    case 6: channels = 4; break;
    default: throw ImageIoError("png: unsupported color type in " + path);
  }

  const size_t stride = static_cast<size_t>(w) * static_cast<size_t>(channels);
  std::vector<uint8_t> raw = detail::zlib_decompress(idat.data(), idat.size(), h * (stride + 1));

  // defilter
  std::vector<uint8_t> img(static_cast<size_t>(h) * stride);
  const int bpp = channels;
  for (uint32_t y = 0; y < h; ++y) {
    const uint8_t filter = raw[y * (stride + 1)];
    const uint8_t* src = raw.data() + y * (stride + 1) + 1;
    uint8_t* dst = img.data() + y * stride;
    const uint8_t* up = y > 0 ? img.data() + (y - 1) * stride : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<size_t>(bpp) ? dst[x - static_cast<size_t>(bpp)] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - static_cast<size_t>(bpp)] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: {
          const int p = a + b - c;
          const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
          v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          break;
        }
        default: throw ImageIoError("png: unknown filter type in " + path);
      }
      dst[x] = static_cast<uint8_t>(v & 0xff);
    }
  }

  Tensor out = Tensor::zeros({static_cast<int64_t>(h), static_cast<int64_t>(w), 3});
  float* po = out.data();
  for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) {
    const uint8_t* px = img.data() + i * static_cast<size_t>(channels);
    const float r = static_cast<float>(px[0]) / 255.0f;
    const float g = channels >= 3 ? static_cast<float>(px[1]) / 255.0f : r;
    const float b = channels >= 3 ? static_cast<float>(px[2]) / 255.0f : r;
    *po++ = r;
    *po++ = g;
    *po++ = b;
  }
  return out;
}

}  // namespace campari
