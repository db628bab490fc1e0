#pragma once

// Learned residual mapping from prior camera samples to predicted cameras:
// predicted = clamp(prior + delta(prior)). Only free components (those whose
// prior is not fixed) enter the network; fixed components pass through. For
// 360-degree scenes the rotation is carried as a 2x2 matrix, the residual is
// added in matrix space and the result projected back to SO(2), so rotation
// wraps instead of clamping.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "campari/camera.hpp"
#include "campari/nn.hpp"
#include "campari/stats.hpp"
#include "campari/tensor.hpp"

namespace campari {

struct ClampSpec {
  float focal_lo = 0.5f, focal_hi = 2.0f;        // resolution-relative focal
  float radius_lo = 0.55f, radius_hi = 0.95f;
  float rot_lo = -static_cast<float>(M_PI), rot_hi = static_cast<float>(M_PI);  // 180-degree mode
  float elev_lo = -static_cast<float>(M_PI) / 2 + 0.01f;
  float elev_hi = static_cast<float>(M_PI) / 2 - 0.01f;

  // Ranges wide enough to keep cameras between foreground and background.
  static ClampSpec defaults(float r_fg, float focal_prior_mean) {
    ClampSpec c;
    c.radius_lo = r_fg + 0.05f;
    c.radius_hi = 0.95f;
    c.focal_lo = 0.5f * focal_prior_mean;
    c.focal_hi = 1.5f * focal_prior_mean;
    return c;
  }
};

struct CamGenConfig {
  int64_t width = 64;
  int depth = 4;
  float last_layer_std = 0.05f;
  bool rot360 = false;
  // free components in canonical order (fx, fy, r_cam, alpha_r, alpha_e);
  // with tied focals the fy slot is never free
  std::array<bool, 5> free_mask = {true, false, true, true, true};
  bool tie_focal = true;

  static CamGenConfig from_prior(const CameraPrior& prior, int64_t width = 64, int depth = 4) {
    CamGenConfig c;
    c.width = width;
    c.depth = depth;
    c.rot360 = prior.rot360;
    c.tie_focal = prior.tie_focal;
    c.free_mask[0] = !prior.focal_x.is_fixed();
    c.free_mask[1] = !prior.tie_focal && !prior.focal_y.is_fixed();
    c.free_mask[2] = !prior.radius.is_fixed();
    c.free_mask[3] = !prior.rotation.is_fixed();
    c.free_mask[4] = !prior.elevation.is_fixed();
    return c;
  }

  // network width: rotation occupies 4 slots in 360-degree mode
  int64_t io_dim() const {
    int64_t n = 0;
    for (int i = 0; i < 5; ++i)
      if (free_mask[static_cast<size_t>(i)]) n += (i == 3 && rot360) ? 4 : 1;
    return n;
  }
};

class CameraGenerator {
 public:
  CameraGenerator() = default;

  CameraGenerator(const CamGenConfig& cfg, const ClampSpec& clamp, Rng& rng)
      : cfg_(cfg), clamp_(clamp) {
    const int64_t dim = cfg.io_dim();
    int64_t prev = dim;
    for (int i = 0; i < cfg.depth; ++i) {
      hidden_.emplace_back(prev, cfg.width, rng);
      prev = cfg.width;
    }
    // zero biases and small weights: the residual starts near the identity
    head_ = Linear::gaussian(prev, dim, rng, cfg.last_layer_std, 0.0f);
  }

  const CamGenConfig& config() const { return cfg_; }
  const ClampSpec& clamp_spec() const { return clamp_; }

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }

  // Test hook: zero the head entirely, making predict the exact identity on
  // in-range priors.
  void zero_head() {
    for (int64_t i = 0; i < head_.W.numel(); ++i) head_.W.data()[i] = 0.0f;
    for (int64_t i = 0; i < head_.b.numel(); ++i) head_.b.data()[i] = 0.0f;
  }

  // prior: [N,5] canonical rows (fx, fy, r_cam, alpha_r, alpha_e).
  // Returns predicted [N,5] canonical rows, differentiable w.r.t. parameters.
  Tensor predict(Tape* tape, const Tensor& prior) const {
    if (prior.ndim() != 2 || prior.dim(1) != CameraPrior::kDim)
      throw TensorError("predict_camera: expected [N,5] canonical camera rows");
    const int64_t n = prior.dim(0);
    if (cfg_.io_dim() == 0) return prior;  // nothing learnable

    Tensor fx = slice(prior, 1, 0, 1);
    Tensor fy = slice(prior, 1, 1, 1);
    Tensor r = slice(prior, 1, 2, 1);
    Tensor rot = slice(prior, 1, 3, 1);
    Tensor el = slice(prior, 1, 4, 1);

    // network input: free slots only
    std::vector<Tensor> in_parts;
    Tensor rot_mat;  // [N,4] built once for 360-degree mode
    if (cfg_.rot360) {
      Tensor ca = cos(rot), sa = sin(rot);
      rot_mat = concat({ca, negate(sa), sa, ca}, 1);
    }
    if (cfg_.free_mask[0]) in_parts.push_back(fx);
    if (cfg_.free_mask[1]) in_parts.push_back(fy);
    if (cfg_.free_mask[2]) in_parts.push_back(r);
    if (cfg_.free_mask[3]) in_parts.push_back(cfg_.rot360 ? rot_mat : rot);
    if (cfg_.free_mask[4]) in_parts.push_back(el);
    Tensor h = in_parts.size() == 1 ? in_parts[0] : concat(in_parts, 1);

    for (const auto& l : hidden_) h = relu(l.forward(tape, h));
    Tensor delta = head_.forward(tape, h);

    // unpack residuals slot by slot
    int64_t at = 0;
    auto take = [&](int64_t len) {
      Tensor t = slice(delta, 1, at, len);
      at += len;
      return t;
    };

    Tensor out_fx = fx, out_fy = fy, out_r = r, out_rot = rot, out_el = el;
    if (cfg_.free_mask[0]) out_fx = clamp(add(fx, take(1)), clamp_.focal_lo, clamp_.focal_hi);
    if (cfg_.tie_focal)
      out_fy = out_fx;
    else if (cfg_.free_mask[1])
      out_fy = clamp(add(fy, take(1)), clamp_.focal_lo, clamp_.focal_hi);
    if (cfg_.free_mask[2]) out_r = clamp(add(r, take(1)), clamp_.radius_lo, clamp_.radius_hi);
    if (cfg_.free_mask[3]) {
      if (cfg_.rot360) {
        Tensor m = add(rot_mat, take(4));
        auto [ca, sa] = project_so2_diff(m);
        out_rot = reshape(atan2(sa, ca), {n, 1});  // wrapped, not clamped
      } else {
        out_rot = clamp(add(rot, take(1)), clamp_.rot_lo, clamp_.rot_hi);
      }
    }
    if (cfg_.free_mask[4]) out_el = clamp(add(el, take(1)), clamp_.elev_lo, clamp_.elev_hi);

    return concat({out_fx, out_fy, out_r, out_rot, out_el}, 1);
  }

  void collect(const std::string& prefix, ParamVec& out) const {
    for (size_t i = 0; i < hidden_.size(); ++i) hidden_[i].collect(prefix + ".h" + std::to_string(i), out);
    head_.collect(prefix + ".head", out);
  }

  Linear& head() { return head_; }

 private:
  CamGenConfig cfg_;
  ClampSpec clamp_;
  std::vector<Linear> hidden_;
  Linear head_;
  bool frozen_ = false;
};

// Draw n priors as canonical [n,5] rows (resolution-independent components).
inline Tensor sample_prior_batch(const CameraPrior& prior, Rng& rng, int64_t n) {
  Tensor out = Tensor::zeros({n, CameraPrior::kDim});
  for (int64_t i = 0; i < n; ++i) {
    PriorSample s = sample_prior(prior, rng, 1, 1);
    for (int k = 0; k < CameraPrior::kDim; ++k) out.data()[i * CameraPrior::kDim + k] = s.params[k];
  }
  return out;
}

struct Marginals {
  std::vector<double> focal, radius, rotation, elevation;
};

// Push n prior samples through the generator (no tape) and collect the
// per-component empirical marginals.
inline Marginals predicted_marginals(const CameraGenerator& gen, const CameraPrior& prior, int64_t n,
                                     Rng& rng) {
  if (n < 1) throw std::invalid_argument("predicted_marginals: n must be >= 1");
  Marginals m;
  const int64_t chunk = 65536;
  for (int64_t done = 0; done < n; done += chunk) {
    const int64_t len = std::min(chunk, n - done);
    Tensor priors = sample_prior_batch(prior, rng, len);
    Tensor pred = gen.predict(nullptr, priors);
    for (int64_t i = 0; i < len; ++i) {
      const float* row = pred.data() + i * CameraPrior::kDim;
      m.focal.push_back(row[0]);
      m.radius.push_back(row[2]);
      m.rotation.push_back(row[3]);
      m.elevation.push_back(row[4]);
    }
  }
  return m;
}

}  // namespace campari
