#pragma once

// Ray-wise sample placement, quadrature of the rendering integral, and
// foreground/background compositing into images.
//
// Foreground points are sampled uniformly within the per-image bounds
// (|t| - r_fg, |t| + r_fg); background points uniformly in inverse depth on
// (0, 1], delivered in inverted-sphere 4-vector form. The final color is
// fg + T_fg * bg; the scene partition keeps the regions disjoint with the
// foreground in front of every camera, which makes this compositing exact.

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>

#include "campari/camera.hpp"
#include "campari/radiance_field.hpp"
#include "campari/tensor.hpp"

namespace campari {

inline std::pair<float, float> fg_bounds(float center_norm, float r_fg) {
  if (r_fg >= center_norm)
    throw std::invalid_argument("fg_bounds: camera lies inside the foreground sphere (r_fg >= |t|)");
  return {center_norm - r_fg, center_norm + r_fg};
}

struct RaySamples {
  Tensor t;       // [R,S] depths along each ray, ascending
  Tensor delta;   // [R,S] integration widths (last one capped)
  Tensor points;  // [R,S,3] world points (fg) or [R,S,4] inverted-sphere points (bg)
};

// Stratified or midpoint foreground sampling between shared scalar bounds.
// origins/dirs: [R,3]; t_near/t_far: scalar tensors.
inline RaySamples sample_fg(const Tensor& origins, const Tensor& dirs, const Tensor& t_near,
                            const Tensor& t_far, int n_samples, Rng* rng) {
  if (n_samples < 1) throw std::invalid_argument("sample_fg: need at least one sample");
  const int64_t r = origins.dim(0);
  const int64_t s = n_samples;
  Tensor span = sub(t_far, t_near);

  Tensor frac;  // in [0,1), one entry per (ray, sample)
  if (rng) {
    frac = Tensor::zeros({r, s});
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < s; ++j)
        frac.data()[i * s + j] =
            (static_cast<float>(j) + static_cast<float>(rng->uniform())) / static_cast<float>(s);
  } else {
    Tensor f1 = Tensor::zeros({s});
    for (int64_t j = 0; j < s; ++j) f1.data()[j] = (static_cast<float>(j) + 0.5f) / static_cast<float>(s);
    frac = f1;  // broadcasts over rays
  }

  RaySamples out;
  Tensor t = add(broadcast_to(reshape(t_near, {}), Shape{r, s}),
                 mul(broadcast_to(frac, Shape{r, s}), broadcast_to(reshape(span, {}), Shape{r, s})));
  out.t = t;
  if (rng) {
    // widths from consecutive depths; the last interval runs to the far bound
    Tensor tail = broadcast_to(reshape(t_far, {}), Shape{r, 1});
    Tensor t_next = concat({slice(t, 1, 1, s - 1), tail}, 1);
    out.delta = sub(t_next, t);
  } else {
    out.delta = broadcast_to(reshape(scale(span, 1.0f / static_cast<float>(s)), {}), Shape{r, s});
  }
  Tensor o_exp = broadcast_axis(origins, 1, s);
  Tensor d_exp = broadcast_axis(dirs, 1, s);
  out.points = add(o_exp, mul(broadcast_axis(t, 2, 3), d_exp));
  return out;
}

// World point where a ray reaches radius 1/s, as an inverted-sphere 4-vector.
// Plain-value helper mirroring the tensor path (tests, diagnostics).
inline std::array<float, 4> bg_point_at_inverse_depth(const std::array<float, 3>& o,
                                                      const std::array<float, 3>& d, float s) {
  const double rho = 1.0 / static_cast<double>(s);
  const double b = static_cast<double>(o[0]) * d[0] + static_cast<double>(o[1]) * d[1] +
                   static_cast<double>(o[2]) * d[2];
  const double c2 = static_cast<double>(o[0]) * o[0] + static_cast<double>(o[1]) * o[1] +
                    static_cast<double>(o[2]) * o[2];
  const double t = -b + std::sqrt(b * b + rho * rho - c2);
  std::array<float, 3> x = {static_cast<float>(o[0] + t * d[0]), static_cast<float>(o[1] + t * d[1]),
                            static_cast<float>(o[2] + t * d[2])};
  return {static_cast<float>(x[0] * s), static_cast<float>(x[1] * s), static_cast<float>(x[2] * s), s};
}

struct BgSamples {
  Tensor t;        // [R,S] world depths, ascending
  Tensor delta;    // [R,S] world-space widths, last capped
  Tensor points4;  // [R,S,4] inverted-sphere points
};

// Inverse-depth background sampling: s stratified over (0,1], sorted so world
// depths ascend. far_cap bounds the outermost integration interval.
inline BgSamples sample_bg(const Tensor& origins, const Tensor& dirs, int n_samples, Rng* rng,
                           float far_cap = 1e4f) {
  if (n_samples < 1) throw std::invalid_argument("sample_bg: need at least one sample");
  const int64_t r = origins.dim(0);
  const int64_t n = n_samples;

  // descending s == ascending world depth
  Tensor s_vals;
  if (rng) {
    s_vals = Tensor::zeros({r, n});
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const double u = rng->uniform();
        s_vals.data()[i * n + j] =
            (static_cast<float>(n - 1 - j) + static_cast<float>(u)) / static_cast<float>(n);
      }
  } else {
    Tensor s1 = Tensor::zeros({n});
    for (int64_t j = 0; j < n; ++j)
      s1.data()[j] = (static_cast<float>(n - 1 - j) + 0.5f) / static_cast<float>(n);
    s_vals = s1;
  }
  Tensor s_rs = broadcast_to(s_vals, Shape{r, n});

  Tensor b = reduce_sum(mul(origins, dirs), 1);            // [R] <o,d>
  Tensor c2 = reduce_sum(square(origins), 1);              // [R] |o|^2
  Tensor rho = div(Tensor::scalar(1.0f), s_rs);            // [R,S]
  Tensor b_rs = broadcast_axis(b, 1, n);
  Tensor c2_rs = broadcast_axis(c2, 1, n);
  Tensor t = add(negate(b_rs), sqrt(add(sub(mul(b_rs, b_rs), c2_rs), mul(rho, rho))));

  BgSamples out;
  out.t = t;
  Tensor t_next = concat({slice(t, 1, 1, n - 1), add(slice(t, 1, n - 1, 1), Tensor::scalar(far_cap))}, 1);
  out.delta = sub(t_next, t);

  Tensor o_exp = broadcast_axis(origins, 1, n);
  Tensor d_exp = broadcast_axis(dirs, 1, n);
  Tensor x = add(o_exp, mul(broadcast_axis(t, 2, 3), d_exp));    // [R,S,3], |x| = 1/s
  Tensor x_unit = mul(x, broadcast_axis(s_rs, 2, 3));
  out.points4 = concat({x_unit, reshape(s_rs, {r, n, 1})}, 2);
  return out;
}

struct Integrated {
  Tensor rgb;      // [R,3]
  Tensor t_out;    // [R] leftover transmittance
  Tensor weights;  // [R,S] per-sample contribution T_i * alpha_i
};

// Quadrature of the rendering integral: alpha_i = 1 - exp(-sigma_i delta_i),
// T_i = prod_{j<i} (1 - alpha_j) computed as exp of an exclusive cumulative
// sum, color = sum_i T_i alpha_i c_i.
inline Integrated integrate_ray(const Tensor& sigma, const Tensor& color, const Tensor& delta) {
  const int64_t r = sigma.dim(0), s = sigma.dim(1);
  Tensor sd = mul(sigma, delta);  // [R,S]

  // strictly-upper-triangular ones: out[.,i] = sum_{j<i} sd[.,j]
  Tensor m = Tensor::zeros({s, s});
  for (int64_t j = 0; j < s; ++j)
    for (int64_t i = j + 1; i < s; ++i) m.data()[j * s + i] = 1.0f;

  Tensor cume = matmul(sd, m);
  Tensor trans = exp(negate(cume));
  Tensor alpha = sub(Tensor::scalar(1.0f), exp(negate(sd)));
  Integrated out;
  out.weights = mul(trans, alpha);
  out.rgb = reduce_sum(mul(color, broadcast_axis(out.weights, 2, 3)), 1);
  out.t_out = exp(negate(reduce_sum(sd, 1)));
  (void)r;
  return out;
}

struct RenderOutput {
  Tensor rgb;       // [H,W,3] in [0,1]
  Tensor fg_alpha;  // [H,W] accumulated foreground opacity
  Tensor depth;     // [H,W] expected fg termination depth (diagnostic)
};

struct RenderConfig {
  float r_fg = 0.5f;
  int n_fg = 16;
  int n_bg = 8;
  bool use_fg = true;
  bool use_bg = true;
  float bg_far_cap = 1e4f;
  int chunk_rays = 4096;
};

// Differentiable camera inputs for one image.
struct RenderCamera {
  DiffCamera cam;
  Tensor fx_px, fy_px;  // scalar tensors
  int width = 0, height = 0;

  static RenderCamera from_pose(const CameraPose& pose, const CameraIntr& intr) {
    RenderCamera rc;
    rc.cam = assemble_camera_diff(Tensor::scalar(pose.r_cam), Tensor::scalar(std::cos(pose.alpha_r)),
                                  Tensor::scalar(std::sin(pose.alpha_r)),
                                  Tensor::scalar(std::cos(pose.alpha_e)),
                                  Tensor::scalar(std::sin(pose.alpha_e)));
    rc.fx_px = Tensor::scalar(intr.fx);
    rc.fy_px = Tensor::scalar(intr.fy);
    rc.width = intr.width;
    rc.height = intr.height;
    return rc;
  }
};

// Renders one image. `rng` enables stratified sampling (training); without it
// sampling is deterministic midpoints (eval). Rays are processed in chunks.
inline RenderOutput render_image(Tape* tape, const RadianceNet& fg_net, const RadianceNet* bg_net,
                                 const RenderCamera& camera, const LatentBundle& z,
                                 const RenderConfig& cfg, Rng* rng) {
  const int w = camera.width, h = camera.height;
  const int64_t total = static_cast<int64_t>(w) * h;
  const float cx = 0.5f * static_cast<float>(w), cy = 0.5f * static_cast<float>(h);

  Tensor radius = sqrt(reduce_sum_all(square(camera.cam.center)));
  fg_bounds(radius.value(), cfg.r_fg);  // precondition check (throws if violated)
  Tensor t_near = sub(radius, Tensor::scalar(cfg.r_fg));
  Tensor t_far = add(radius, Tensor::scalar(cfg.r_fg));

  Tensor grid = pixel_grid(w, h);
  std::vector<Tensor> rgb_chunks, alpha_chunks, depth_chunks;

  for (int64_t start = 0; start < total; start += cfg.chunk_rays) {
    const int64_t len = std::min<int64_t>(cfg.chunk_rays, total - start);
    Tensor uv = slice(grid, 0, start, len);
    DiffRays rays = rays_diff(camera.cam, uv, camera.fx_px, camera.fy_px, cx, cy);

    Tensor fg_rgb, t_fg, fg_w, fg_t;
    if (cfg.use_fg) {
      RaySamples smp = sample_fg(rays.origins, rays.dirs, t_near, t_far, cfg.n_fg, rng);
      Tensor pts = reshape(smp.points, {len * cfg.n_fg, 3});
      Tensor dirs_rep = reshape(broadcast_axis(rays.dirs, 1, cfg.n_fg), {len * cfg.n_fg, 3});
      auto field = fg_net.eval(tape, pts, dirs_rep, z.zs_fg, z.za_fg);
      Integrated integ = integrate_ray(reshape(field.sigma, {len, cfg.n_fg}),
                                       reshape(field.color, {len, cfg.n_fg, 3}), smp.delta);
      fg_rgb = integ.rgb;
      t_fg = integ.t_out;
      fg_w = integ.weights;
      fg_t = smp.t;
    } else {
      fg_rgb = Tensor::zeros({len, 3});
      t_fg = Tensor::ones({len});
      fg_w = Tensor::zeros({len, 1});
      fg_t = Tensor::zeros({len, 1});
    }

    Tensor rgb = fg_rgb;
    if (cfg.use_bg && bg_net) {
      BgSamples smp = sample_bg(rays.origins, rays.dirs, cfg.n_bg, rng, cfg.bg_far_cap);
      Tensor pts = reshape(smp.points4, {len * cfg.n_bg, 4});
      Tensor dirs_rep = reshape(broadcast_axis(rays.dirs, 1, cfg.n_bg), {len * cfg.n_bg, 3});
      auto field = bg_net->eval(tape, pts, dirs_rep, z.zs_bg, z.za_bg);
      Integrated integ = integrate_ray(reshape(field.sigma, {len, cfg.n_bg}),
                                       reshape(field.color, {len, cfg.n_bg, 3}), smp.delta);
      rgb = add(rgb, mul(integ.rgb, broadcast_axis(t_fg, 1, 3)));
    }

    rgb_chunks.push_back(rgb);
    alpha_chunks.push_back(sub(Tensor::scalar(1.0f), t_fg));
    Tensor wsum = reduce_sum(fg_w, 1);
    depth_chunks.push_back(div(reduce_sum(mul(fg_w, fg_t), 1), add(wsum, Tensor::scalar(1e-8f))));
  }

  RenderOutput out;
  out.rgb = reshape(rgb_chunks.size() == 1 ? rgb_chunks[0] : concat(rgb_chunks, 0), {h, w, 3});
  out.fg_alpha = reshape(alpha_chunks.size() == 1 ? alpha_chunks[0] : concat(alpha_chunks, 0), {h, w});
  out.depth = reshape(depth_chunks.size() == 1 ? depth_chunks[0] : concat(depth_chunks, 0), {h, w});
  return out;
}

}  // namespace campari
