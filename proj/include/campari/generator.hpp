#pragma once

// The full image-generator assembly: foreground/background radiance fields,
// the optional camera generator, and the camera prior, with a differentiable
// path from a canonical prior camera row all the way to rendered pixels.

#include <cmath>
#include <memory>
#include <optional>
#include <string>

#include "campari/camera.hpp"
#include "campari/camera_generator.hpp"
#include "campari/radiance_field.hpp"
#include "campari/volume_renderer.hpp"

namespace campari {

struct ModelConfig {
  float r_fg = 0.5f;
  int64_t latent_dim = 64;
  bool background = true;
  bool camera_generator = true;
  int64_t fg_width = 128;
  int fg_depth = 8;
  int n_freq_x = 10;
  int n_freq_d = 4;
  int64_t camgen_width = 64;
  int camgen_depth = 4;
  int disc_channel_div = 1;
  float bg_far_cap = 1e4f;
  CameraPrior prior;

  ClampSpec clamps() const {
    return ClampSpec::defaults(r_fg, static_cast<float>(prior.focal_x.mean()));
  }
};

class GeneratorModel {
 public:
  GeneratorModel() = default;

  GeneratorModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    RadianceConfig rc;
    rc.width = cfg.fg_width;
    rc.depth = cfg.fg_depth;
    rc.skip_at = cfg.fg_depth / 2;
    rc.n_freq_x = cfg.n_freq_x;
    rc.n_freq_d = cfg.n_freq_d;
    rc.latent_dim = cfg.latent_dim;
    rc.point_dim = 3;
    fg_ = RadianceNet(rc, rng);
    if (cfg.background) {
      rc.point_dim = 4;
      bg_.emplace(rc, rng);
    }
    if (cfg.camera_generator) {
      CamGenConfig cc = CamGenConfig::from_prior(cfg.prior, cfg.camgen_width, cfg.camgen_depth);
      camgen_.emplace(cc, cfg.clamps(), rng);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const RadianceNet& fg() const { return fg_; }
  const RadianceNet* bg() const { return bg_ ? &*bg_ : nullptr; }
  CameraGenerator* camgen() { return camgen_ ? &*camgen_ : nullptr; }
  const CameraGenerator* camgen() const { return camgen_ ? &*camgen_ : nullptr; }

  // Prior camera -> predicted camera, canonical rows. Pass-through when the
  // camera generator is disabled.
  Tensor predict_cameras(Tape* tape, const Tensor& prior_rows) const {
    return camgen_ ? camgen_->predict(tape, prior_rows) : prior_rows;
  }

  // Canonical camera row [1,5] -> rays-ready differentiable camera.
  RenderCamera camera_from_row(const Tensor& row, int width, int height) const {
    Tensor fx = reshape(slice(row, 1, 0, 1), {});
    Tensor fy = reshape(slice(row, 1, 1, 1), {});
    Tensor r = reshape(slice(row, 1, 2, 1), {});
    Tensor rot = reshape(slice(row, 1, 3, 1), {});
    Tensor el = reshape(slice(row, 1, 4, 1), {});
    RenderCamera cam;
    cam.cam = assemble_camera_diff(r, cos(rot), sin(rot), cos(el), sin(el));
    // relative focal -> pixels at this resolution
    cam.fx_px = scale(fx, static_cast<float>(width));
    cam.fy_px = scale(fy, static_cast<float>(width));
    cam.width = width;
    cam.height = height;
    return cam;
  }

  struct RenderSettings {
    int resolution = 32;
    int n_fg = 20;
    int n_bg = 0;
    bool use_fg = true;
    bool use_bg = true;  // only effective when the model has a background
    int chunk_rays = 4096;
  };

  // Render one image for a canonical camera row (already camera-generated)
  // and a latent bundle. `rng` enables stratified sampling.
  RenderOutput render(Tape* tape, const Tensor& camera_row, const LatentBundle& z,
                      const RenderSettings& s, Rng* rng) const {
    RenderCamera cam = camera_from_row(camera_row, s.resolution, s.resolution);
    RenderConfig rc;
    rc.r_fg = cfg_.r_fg;
    rc.n_fg = s.n_fg;
    rc.n_bg = s.n_bg;
    rc.use_fg = s.use_fg;
    rc.use_bg = s.use_bg && bg_.has_value() && s.n_bg > 0;
    rc.bg_far_cap = cfg_.bg_far_cap;
    rc.chunk_rays = s.chunk_rays;
    return render_image(tape, fg_, bg_ ? &*bg_ : nullptr, cam, z, rc, rng);
  }

  LatentBundle sample_latents(Rng& rng) const { return LatentBundle::sample(cfg_.latent_dim, rng); }

  // Parameters in a stable order; the camera generator contributes only when
  // enabled (its tensors are then absent from checkpoints as well).
  void collect(ParamVec& out) const {
    fg_.collect("gen.fg", out);
    if (bg_) bg_->collect("gen.bg", out);
    if (camgen_) camgen_->collect("gen.camgen", out);
  }

  // Names of parameters owned by the camera generator (lr multipliers,
  // freeze handling).
  bool is_camgen_param(const std::string& name) const { return name.rfind("gen.camgen", 0) == 0; }

 private:
  ModelConfig cfg_;
  RadianceNet fg_;
  std::optional<RadianceNet> bg_;
  std::optional<CameraGenerator> camgen_;
};

}  // namespace campari
