#pragma once

// Progressive-growing discriminator: residual blocks of CoordConv layers with
// leaky-ReLU activations and stride-2 downsampling, a fromRGB adapter per
// stage, and linear fade-in of newly grown blocks. Images are [B, R, R, 3]
// channels-last; logits come back as [B].

#include <cmath>
#include <string>
#include <vector>

#include "campari/nn.hpp"
#include "campari/tensor.hpp"

namespace campari {

struct GrowthState {
  int stage = 0;
  float fade_alpha = 1.0f;  // blend weight of the newest block; 1 once faded in
};

struct DiscConfig {
  std::vector<int> resolutions = {32, 64, 128};  // ascending ladder
  int channel_div = 1;                           // desk-scale divisor for the channel ladder

  int channels_at(int res) const {
    int c;
    switch (res) {
      case 128: c = 64; break;
      case 64: c = 128; break;
      case 32: c = 128; break;
      case 16: c = 256; break;
      default: c = 256; break;  // 8 and below
    }
    return std::max(4, c / channel_div);
  }
};

namespace detail {

// constant [H,W,2] coordinate channels, linearly spaced in [-1,1]
inline Tensor coord_channels(int64_t h, int64_t w) {
  Tensor c = Tensor::zeros({h, w, 2});
  float* p = c.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      *p++ = w > 1 ? 2.0f * static_cast<float>(x) / static_cast<float>(w - 1) - 1.0f : 0.0f;
      *p++ = h > 1 ? 2.0f * static_cast<float>(y) / static_cast<float>(h - 1) - 1.0f : 0.0f;
    }
  return c;
}

}  // namespace detail

// Append x,y coordinate channels to a [B,H,W,C] feature map.
inline Tensor coordconv_augment(const Tensor& x) {
  if (x.ndim() != 4) throw TensorError("coordconv_augment: expected [B,H,W,C]");
  Tensor coords = broadcast_axis(detail::coord_channels(x.dim(1), x.dim(2)), 0, x.dim(0));
  return concat({x, coords}, 3);
}

// Convolution built from im2col + matmul.
class Conv {
 public:
  Conv() = default;
  Conv(int64_t in_ch, int64_t out_ch, int kernel, int stride, int pad, Rng& rng)
      : kernel_(kernel), stride_(stride), pad_(pad), in_ch_(in_ch) {
    const int64_t fan_in = static_cast<int64_t>(kernel) * kernel * in_ch;
    W = he_uniform({fan_in, out_ch}, fan_in, rng);
    b = Tensor::zeros({out_ch});
  }

  Tensor forward(Tape* tape, const Tensor& x) const {
    ConvGeom geom{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel_, stride_, pad_};
    if (x.dim(3) != in_ch_) throw TensorError("conv: channel mismatch");
    Tensor cols = im2col(x, geom);
    Tensor w = tape ? tape->watch(W) : W;
    Tensor bb = tape ? tape->watch(b) : b;
    Tensor out = linear(cols, w, bb);
    return reshape(out, {geom.batch, geom.out_h(), geom.out_w(), W.dim(1)});
  }

  void collect(const std::string& prefix, ParamVec& out) const {
    out.push_back({prefix + ".w", W});
    out.push_back({prefix + ".b", b});
  }

  Tensor W, b;
  int kernel_ = 3, stride_ = 1, pad_ = 1;
  int64_t in_ch_ = 0;
};

// 2x2 average pooling via im2col and a constant averaging matrix.
inline Tensor avg_pool2(const Tensor& x) {
  ConvGeom geom{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 2, 2, 0};
  Tensor cols = im2col(x, geom);
  const int64_t c = x.dim(3);
  Tensor avg = Tensor::zeros({4 * c, c});
  for (int k = 0; k < 4; ++k)
    for (int64_t ch = 0; ch < c; ++ch) avg.data()[(k * c + ch) * c + ch] = 0.25f;
  return reshape(matmul(cols, avg), {geom.batch, geom.out_h(), geom.out_w(), c});
}

// One residual block: two CoordConv 3x3 layers (the second stride-2) plus a
// stride-2 1x1 skip, summed and rescaled.
struct DiscBlock {
  DiscBlock() = default;
  DiscBlock(int64_t in_ch, int64_t out_ch, Rng& rng)
      : conv1(in_ch + 2, in_ch, 3, 1, 1, rng),
        conv2(in_ch + 2, out_ch, 3, 2, 1, rng),
        skip(in_ch, out_ch, 1, 2, 0, rng) {}

  Tensor forward(Tape* tape, const Tensor& x) const {
    Tensor y = leaky_relu(conv1.forward(tape, coordconv_augment(x)));
    y = leaky_relu(conv2.forward(tape, coordconv_augment(y)));
    Tensor s = skip.forward(tape, x);
    return scale(add(y, s), static_cast<float>(1.0 / std::sqrt(2.0)));
  }

  void collect(const std::string& prefix, ParamVec& out) const {
    conv1.collect(prefix + ".c1", out);
    conv2.collect(prefix + ".c2", out);
    skip.collect(prefix + ".skip", out);
  }

  Conv conv1, conv2, skip;
};

class Discriminator {
 public:
  Discriminator() = default;

  Discriminator(const DiscConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.resolutions.empty()) throw TensorError("discriminator: empty resolution ladder");
    const int r0 = cfg.resolutions[0];
    // base pyramid: blocks from the first stage resolution down to 4x4
    for (int r = r0; r > 4; r /= 2)
      blocks_.insert(blocks_.begin(), DiscBlock(cfg.channels_at(r), cfg.channels_at(r / 2), rng));
    from_rgb_.emplace_back(3 + 2, cfg.channels_at(r0), 1, 1, 0, rng);
    head_ = Linear(16 * cfg.channels_at(4), 1, rng);
    allocated_stage_ = 0;
  }

  int allocated_stage() const { return allocated_stage_; }
  const DiscConfig& config() const { return cfg_; }

  // Number of blocks active at a stage (highest resolution first).
  int blocks_at_stage(int stage) const {
    int n = 0;
    for (int r = cfg_.resolutions[static_cast<size_t>(stage)]; r > 4; r /= 2) ++n;
    return n;
  }

  // Allocates the next stage's block and fromRGB adapter; earlier parameters
  // are untouched. Skipping stages is an error.
  void grow(GrowthState& growth, Rng& rng) {
    const int new_stage = growth.stage + 1;
    if (new_stage != allocated_stage_ + 1)
      throw TensorError("discriminator grow: stages must advance one at a time");
    if (new_stage >= static_cast<int>(cfg_.resolutions.size()))
      throw TensorError("discriminator grow: past the end of the resolution ladder");
    const int r = cfg_.resolutions[static_cast<size_t>(new_stage)];
    blocks_.push_back(DiscBlock(cfg_.channels_at(r), cfg_.channels_at(r / 2), rng));
    from_rgb_.emplace_back(3 + 2, cfg_.channels_at(r), 1, 1, 0, rng);
    allocated_stage_ = new_stage;
    growth.stage = new_stage;
    growth.fade_alpha = 0.0f;
  }

  // images: [B, R, R, 3] with R = resolutions[growth.stage] -> logits [B]
  Tensor forward(Tape* tape, const Tensor& images, const GrowthState& growth) const {
    if (growth.stage > allocated_stage_) throw TensorError("discriminator: stage not yet grown");
    const int res = cfg_.resolutions[static_cast<size_t>(growth.stage)];
    if (images.ndim() != 4 || images.dim(1) != res || images.dim(2) != res || images.dim(3) != 3)
      throw TensorError("discriminator: image resolution does not match the growth stage");

    const int top = blocks_at_stage(growth.stage) - 1;  // this stage's highest-resolution block
    Tensor h;
    int next_block;  // index of the next block to apply (descending toward 4x4)

    const bool fading = growth.stage > 0 && growth.fade_alpha < 1.0f;
    if (fading) {
      Tensor new_path = blocks_[static_cast<size_t>(top)].forward(
          tape, leaky_relu(from_rgb_[static_cast<size_t>(growth.stage)].forward(
                    tape, coordconv_augment(images))));
      Tensor old_path = leaky_relu(from_rgb_[static_cast<size_t>(growth.stage - 1)].forward(
          tape, coordconv_augment(avg_pool2(images))));
      if (growth.fade_alpha <= 0.0f) {
        h = old_path;  // exact endpoint
      } else {
        h = add(scale(new_path, growth.fade_alpha), scale(old_path, 1.0f - growth.fade_alpha));
      }
      next_block = top - 1;
    } else {
      h = leaky_relu(
          from_rgb_[static_cast<size_t>(growth.stage)].forward(tape, coordconv_augment(images)));
      next_block = top;
    }

    for (int i = next_block; i >= 0; --i) h = blocks_[static_cast<size_t>(i)].forward(tape, h);

    Tensor flat = reshape(h, {h.dim(0), h.dim(1) * h.dim(2) * h.dim(3)});
    return reshape(head_.forward(tape, flat), {h.dim(0)});
  }

  void collect(const std::string& prefix, ParamVec& out) const {
    for (size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".b" + std::to_string(i), out);
    for (size_t i = 0; i < from_rgb_.size(); ++i)
      from_rgb_[i].collect(prefix + ".rgb" + std::to_string(i), out);
    head_.collect(prefix + ".head", out);
  }

 private:
  DiscConfig cfg_;
  // blocks_[0] is the lowest-resolution block (8 -> 4); growth appends
  std::vector<DiscBlock> blocks_;
  std::vector<Conv> from_rgb_;  // one per stage
  Linear head_;
  int allocated_stage_ = 0;
};

}  // namespace campari
