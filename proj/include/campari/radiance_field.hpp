#pragma once

// Positional encoding and the conditional radiance-field MLPs for the
// foreground (3D points) and background (inverted-sphere 4D points).

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "campari/nn.hpp"
#include "campari/tensor.hpp"

namespace campari {

struct PosEncoding {
  int n_freq = 10;
  bool include_input = true;

  int64_t out_dim(int64_t in_dim) const { return in_dim * (2 * n_freq + (include_input ? 1 : 0)); }

  // x: [N, k] -> [N, k * (2*n_freq + include_input)]
  // layout: [x, sin(2^0 pi x), cos(2^0 pi x), sin(2^1 pi x), ...]
  Tensor encode(const Tensor& x) const {
    std::vector<Tensor> parts;
    if (include_input) parts.push_back(x);
    for (int i = 0; i < n_freq; ++i) {
      const float f = static_cast<float>(std::ldexp(M_PI, i));  // 2^i * pi
      Tensor sx = scale(x, f);
      parts.push_back(sin(sx));
      parts.push_back(cos(sx));
    }
    return parts.size() == 1 ? parts[0] : concat(parts, x.ndim() - 1);
  }
};

// Map points outside the unit sphere to the bounded inverted-sphere form
// (x/|x|, 1/|x|) in [-1,1]^4. Plain-value helper for tests and diagnostics;
// the renderer builds the same quantity out of tape ops.
inline std::array<float, 4> inverted_sphere_point(const std::array<float, 3>& x) {
  const double n = std::sqrt(static_cast<double>(x[0]) * x[0] + static_cast<double>(x[1]) * x[1] +
                             static_cast<double>(x[2]) * x[2]);
  return {static_cast<float>(x[0] / n), static_cast<float>(x[1] / n), static_cast<float>(x[2] / n),
          static_cast<float>(1.0 / n)};
}

struct RadianceConfig {
  int64_t width = 128;
  int depth = 8;           // hidden layers
  int skip_at = 4;         // encoded input re-concatenated at this layer
  int point_dim = 3;       // 3 = foreground, 4 = inverted-sphere background
  int n_freq_x = 10;
  int n_freq_d = 4;
  bool include_input = true;
  int64_t latent_dim = 64;
  // softplus(bias) = 0.1: a faint initial medium, neither clear nor opaque
  float sigma_bias = -2.2521684f;
};

// MLP with a skip connection; density head softplus, color head sigmoid.
// The shape code joins the encoded point at the trunk input; the appearance
// code joins the encoded viewing direction at the color branch.
class RadianceNet {
 public:
  RadianceNet() = default;

  RadianceNet(const RadianceConfig& cfg, Rng& rng) : cfg_(cfg) {
    enc_x_.n_freq = cfg.n_freq_x;
    enc_x_.include_input = cfg.include_input;
    enc_d_.n_freq = cfg.n_freq_d;
    enc_d_.include_input = cfg.include_input;
    const int64_t ex = enc_x_.out_dim(cfg.point_dim);
    const int64_t ed = enc_d_.out_dim(3);
    const int64_t cond_in = ex + cfg.latent_dim;

    int64_t prev = cond_in;
    for (int i = 0; i < cfg.depth; ++i) {
      const int64_t in = (i == cfg.skip_at && i > 0) ? prev + cond_in : prev;
      trunk_.emplace_back(in, cfg.width, rng);
      prev = cfg.width;
    }
    sigma_head_ = Linear(cfg.width, 1, rng);
    sigma_head_.b.data()[0] = cfg.sigma_bias;
    color_hidden_ = Linear(cfg.width + ed + cfg.latent_dim, cfg.width, rng);
    color_head_ = Linear(cfg.width, 3, rng);
  }

  const RadianceConfig& config() const { return cfg_; }

  struct Output {
    Tensor sigma;  // [N]
    Tensor color;  // [N,3]
  };

  // x: [N, point_dim] points, d: [N,3] unit view dirs, z_s/z_a: [latent_dim]
  Output eval(Tape* tape, const Tensor& x, const Tensor& d, const Tensor& z_s, const Tensor& z_a) const {
    const int64_t n = x.dim(0);
    Tensor ex = enc_x_.encode(x);
    Tensor zs_rows = broadcast_axis(z_s, 0, n);
    Tensor cond = concat({ex, zs_rows}, 1);

    Tensor h = cond;
    for (int i = 0; i < cfg_.depth; ++i) {
      if (i == cfg_.skip_at && i > 0) h = concat({h, cond}, 1);
      h = relu(trunk_[static_cast<size_t>(i)].forward(tape, h));
    }

    Output out;
    out.sigma = reshape(softplus(sigma_head_.forward(tape, h)), {n});

    Tensor ed = enc_d_.encode(d);
    Tensor za_rows = broadcast_axis(z_a, 0, n);
    Tensor cb = concat({h, ed, za_rows}, 1);
    out.color = sigmoid(color_head_.forward(tape, relu(color_hidden_.forward(tape, cb))));
    return out;
  }

  void collect(const std::string& prefix, ParamVec& out) const {
    for (size_t i = 0; i < trunk_.size(); ++i) trunk_[i].collect(prefix + ".trunk" + std::to_string(i), out);
    sigma_head_.collect(prefix + ".sigma", out);
    color_hidden_.collect(prefix + ".chid", out);
    color_head_.collect(prefix + ".color", out);
  }

  const PosEncoding& point_encoding() const { return enc_x_; }

 private:
  RadianceConfig cfg_;
  PosEncoding enc_x_, enc_d_;
  std::vector<Linear> trunk_;
  Linear sigma_head_, color_hidden_, color_head_;
};

// Four latent codes, all ~ N(0, I) with a shared dimension.
struct LatentBundle {
  Tensor zs_fg, za_fg, zs_bg, za_bg;

  static LatentBundle sample(int64_t dim, Rng& rng) {
    LatentBundle z;
    z.zs_fg = Tensor::randn({dim}, rng);
    z.za_fg = Tensor::randn({dim}, rng);
    z.zs_bg = Tensor::randn({dim}, rng);
    z.za_bg = Tensor::randn({dim}, rng);
    return z;
  }

  static LatentBundle zeros(int64_t dim) {
    LatentBundle z;
    z.zs_fg = Tensor::zeros({dim});
    z.za_fg = Tensor::zeros({dim});
    z.zs_bg = Tensor::zeros({dim});
    z.za_bg = Tensor::zeros({dim});
    return z;
  }

  static LatentBundle lerp(const LatentBundle& a, const LatentBundle& b, float t) {
    auto mix = [t](const Tensor& p, const Tensor& q) {
      return add(scale(p, 1.0f - t), scale(q, t));
    };
    LatentBundle z;
    z.zs_fg = mix(a.zs_fg, b.zs_fg);
    z.za_fg = mix(a.za_fg, b.za_fg);
    z.zs_bg = mix(a.zs_bg, b.zs_bg);
    z.za_bg = mix(a.za_bg, b.za_bg);
    return z;
  }
};

}  // namespace campari
