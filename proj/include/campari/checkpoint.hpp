#pragma once

// Versioned checkpoint container. Layout (all integers little-endian):
//   magic "CMPR" | u32 version | entries...
// entry: u32 name_len | name UTF-8 | u32 ndim | u32 dims[ndim] | f32 data[]
// Every stored quantity is a named f32 array; RNG state and counters are
// encoded as exact f32 values (16-bit halfwords for the RNG words).

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "campari/nn.hpp"
#include "campari/rng.hpp"
#include "campari/tensor.hpp"

namespace campari {

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};

namespace detail {

constexpr uint32_t kCheckpointVersion = 1;

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

inline void put_f32(std::vector<uint8_t>& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

struct Reader {
  const uint8_t* p;
  size_t left;
  uint32_t u32() {
    if (left < 4) throw CheckpointError("checkpoint: truncated tensor");
    uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                 (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    p += 4;
    left -= 4;
    return v;
  }
  float f32() {
    uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamVec& entries) {
  std::vector<uint8_t> out;
  out.push_back('C');
  out.push_back('M');
  out.push_back('P');
  out.push_back('R');
  detail::put_u32(out, detail::kCheckpointVersion);
  for (const auto& e : entries) {
    detail::put_u32(out, static_cast<uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    detail::put_u32(out, static_cast<uint32_t>(e.value.ndim()));
    for (int i = 0; i < e.value.ndim(); ++i)
      detail::put_u32(out, static_cast<uint32_t>(e.value.dim(i)));
    for (int64_t i = 0; i < e.value.numel(); ++i) detail::put_f32(out, e.value[i]);
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  const size_t written = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (written != out.size()) throw CheckpointError("checkpoint: short write to " + path);
}

inline ParamVec load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw CheckpointError("checkpoint: cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(size));
  const size_t got = std::fread(buf.data(), 1, buf.size(), f);
  std::fclose(f);
  if (got != buf.size()) throw CheckpointError("checkpoint: short read from " + path);

  if (buf.size() < 8 || std::memcmp(buf.data(), "CMPR", 4) != 0)
    throw CheckpointError("checkpoint: bad magic (not a CMPR container)");
  detail::Reader r{buf.data() + 4, buf.size() - 4};
  const uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));

  ParamVec out;
  while (r.left > 0) {
    const uint32_t name_len = r.u32();
    if (r.left < name_len) throw CheckpointError("checkpoint: truncated tensor");
    std::string name(reinterpret_cast<const char*>(r.p), name_len);
    r.p += name_len;
    r.left -= name_len;
    const uint32_t ndim = r.u32();
    Shape shape;
    int64_t numel = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
      const uint32_t d = r.u32();
      shape.push_back(static_cast<int64_t>(d));
      numel *= d;
    }
    if (r.left < static_cast<size_t>(numel) * 4) throw CheckpointError("checkpoint: truncated tensor");
    std::vector<float> data(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) data[static_cast<size_t>(i)] = r.f32();
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

// RNG state <-> 16 exact f32 halfwords.
inline Tensor encode_rng_state(const Rng& rng) {
  Tensor t = Tensor::zeros({16});
  auto st = rng.state();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      t.data()[i * 4 + j] = static_cast<float>((st[static_cast<size_t>(i)] >> (16 * j)) & 0xffffull);
  return t;
}

inline void decode_rng_state(const Tensor& t, Rng& rng) {
  if (t.numel() != 16) throw CheckpointError("checkpoint: malformed rng state");
  std::array<uint64_t, 4> st{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      st[static_cast<size_t>(i)] |= static_cast<uint64_t>(static_cast<uint32_t>(t[i * 4 + j]))
                                    << (16 * j);
  rng.set_state(st);
}

}  // namespace campari
