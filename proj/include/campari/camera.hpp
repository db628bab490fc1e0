#pragma once

// Camera parametrization and ray generation.
//
// Conventions (used everywhere in this repo):
//   - right-handed world coordinates, world up = +y
//   - the camera sits on a sphere of radius r_cam looking at the origin,
//     up-right (no roll); it looks down its own +z axis
//   - elevation is measured from the equatorial plane (0 = horizontal),
//     alpha_e in [-pi/2, pi/2]; rotation alpha_r in [-pi, pi]
//   - pixel (row j, col i) has center (i + 0.5, j + 0.5); the principal
//     point is (W/2, H/2); image row 0 is the top of the image
//   - focal lengths in priors and camera vectors are resolution-relative;
//     pixels = f_rel * width, so the field of view is invariant under
//     progressive growing

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "campari/rng.hpp"
#include "campari/tensor.hpp"

namespace campari {

struct CameraIntr {
  float fx = 0.0f, fy = 0.0f;  // pixels
  int width = 0, height = 0;
  float cx() const { return 0.5f * static_cast<float>(width); }
  float cy() const { return 0.5f * static_cast<float>(height); }
};

struct CameraPose {
  float r_cam = 0.75f;
  float alpha_r = 0.0f;  // rotation about world up
  float alpha_e = 0.0f;  // elevation from the equatorial plane
  std::optional<std::array<float, 4>> rot2x2;  // row-major (a,b,c,d), 360-degree scenes
};

struct CameraMatrices {
  std::array<float, 9> K{};  // row-major 3x3
  std::array<float, 9> R{};  // world-to-camera
  std::array<float, 3> t{};
  std::array<float, 3> center() const {  // -R^T t
    return {-(R[0] * t[0] + R[3] * t[1] + R[6] * t[2]),
            -(R[1] * t[0] + R[4] * t[1] + R[7] * t[2]),
            -(R[2] * t[0] + R[5] * t[1] + R[8] * t[2])};
  }
};

struct Ray {
  std::array<float, 3> origin{};
  std::array<float, 3> dir{};  // unit
  float t_near = 0.0f, t_far = 0.0f;  // filled by the volume renderer
};

// ---------------------------------------------------------------------------
// Pose -> matrices
// ---------------------------------------------------------------------------

namespace detail {

inline std::array<double, 3> cross3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm3(const std::array<double, 3>& a) {
  return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
}

}  // namespace detail

// Camera center for a spherical pose.
inline std::array<float, 3> pose_center(const CameraPose& pose) {
  const double ce = std::cos(static_cast<double>(pose.alpha_e));
  const double se = std::sin(static_cast<double>(pose.alpha_e));
  const double ca = std::cos(static_cast<double>(pose.alpha_r));
  const double sa = std::sin(static_cast<double>(pose.alpha_r));
  const double r = pose.r_cam;
  return {static_cast<float>(r * ce * sa), static_cast<float>(r * se), static_cast<float>(r * ce * ca)};
}

// Look-at assembly. At |alpha_e| = pi/2 the +y up vector degenerates and the
// documented fallback up = +z is used.
inline CameraMatrices pose_to_matrices(const CameraPose& pose, const CameraIntr& intr) {
  if (!(pose.r_cam > 0.0f)) throw std::invalid_argument("pose_to_matrices: r_cam must be positive");

  const auto cf = pose_center(pose);
  std::array<double, 3> c = {cf[0], cf[1], cf[2]};
  const double cn = detail::norm3(c);
  std::array<double, 3> f = {-c[0] / cn, -c[1] / cn, -c[2] / cn};  // forward, toward origin

  std::array<double, 3> up = {0.0, 1.0, 0.0};
  std::array<double, 3> s = detail::cross3(f, up);
  double sn = detail::norm3(s);
  if (sn < 1e-6) {  // looking straight up/down
    up = {0.0, 0.0, 1.0};
    s = detail::cross3(f, up);
    sn = detail::norm3(s);
  }
  s = {s[0] / sn, s[1] / sn, s[2] / sn};
  const std::array<double, 3> d = detail::cross3(f, s);  // camera +y (points image-down)

  CameraMatrices m;
  m.R = {static_cast<float>(s[0]), static_cast<float>(s[1]), static_cast<float>(s[2]),
         static_cast<float>(d[0]), static_cast<float>(d[1]), static_cast<float>(d[2]),
         static_cast<float>(f[0]), static_cast<float>(f[1]), static_cast<float>(f[2])};
  // t = -R c
  m.t = {static_cast<float>(-(s[0] * c[0] + s[1] * c[1] + s[2] * c[2])),
         static_cast<float>(-(d[0] * c[0] + d[1] * c[1] + d[2] * c[2])),
         static_cast<float>(-(f[0] * c[0] + f[1] * c[1] + f[2] * c[2]))};
  m.K = {intr.fx, 0.0f, intr.cx(), 0.0f, intr.fy, intr.cy(), 0.0f, 0.0f, 1.0f};
  return m;
}

// Spherical parameters back from the camera center (valid away from the poles).
inline CameraPose recover_pose(const CameraMatrices& m) {
  const auto c = m.center();
  CameraPose p;
  const double r = detail::norm3({c[0], c[1], c[2]});
  p.r_cam = static_cast<float>(r);
  p.alpha_e = static_cast<float>(std::asin(std::clamp(static_cast<double>(c[1]) / r, -1.0, 1.0)));
  p.alpha_r = static_cast<float>(std::atan2(static_cast<double>(c[0]), static_cast<double>(c[2])));
  return p;
}

// ---------------------------------------------------------------------------
// SO(2) projection
// ---------------------------------------------------------------------------

struct So2Result {
  std::array<float, 4> rot;  // row-major (cos, -sin, sin, cos)
  float theta = 0.0f;
  bool degenerate = false;
};

// Closest rotation to an arbitrary 2x2 matrix (Frobenius sense):
// theta = atan2(c - b, a + d).
inline So2Result project_so2(const std::array<float, 4>& m) {
  const double x = static_cast<double>(m[0]) + static_cast<double>(m[3]);
  const double y = static_cast<double>(m[2]) - static_cast<double>(m[1]);
  So2Result r;
  if (std::fabs(x) < 1e-12 && std::fabs(y) < 1e-12) {
    r.rot = {1.0f, 0.0f, 0.0f, 1.0f};
    r.theta = 0.0f;
    r.degenerate = true;
    return r;
  }
  r.theta = static_cast<float>(std::atan2(y, x));
  const float ct = std::cos(r.theta), st = std::sin(r.theta);
  r.rot = {ct, -st, st, ct};
  return r;
}

// Batched, differentiable variant: entries [N,4] -> (cos theta, sin theta),
// each [N]. Gradients flow through atan2.
inline std::pair<Tensor, Tensor> project_so2_diff(const Tensor& entries) {
  if (entries.ndim() != 2 || entries.dim(1) != 4) throw TensorError("project_so2_diff: expected [N,4]");
  Tensor a = slice(entries, 1, 0, 1);
  Tensor b = slice(entries, 1, 1, 1);
  Tensor c = slice(entries, 1, 2, 1);
  Tensor d = slice(entries, 1, 3, 1);
  Tensor theta = atan2(sub(c, b), add(a, d));  // [N,1]
  return {reshape(cos(theta), {entries.dim(0)}), reshape(sin(theta), {entries.dim(0)})};
}

// ---------------------------------------------------------------------------
// Ray generation (float API)
// ---------------------------------------------------------------------------

// One ray per pixel, row-major over (row, col). Origin = camera center,
// direction = normalized R^T K^{-1} (u, v, 1).
inline std::vector<Ray> generate_rays(const CameraMatrices& m, const CameraIntr& intr) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<size_t>(intr.width) * intr.height);
  const auto c = m.center();
  for (int j = 0; j < intr.height; ++j)
    for (int i = 0; i < intr.width; ++i) {
      const double dx = (i + 0.5 - intr.cx()) / intr.fx;
      const double dy = (j + 0.5 - intr.cy()) / intr.fy;
      // world dir = R^T (dx, dy, 1)
      std::array<double, 3> d = {m.R[0] * dx + m.R[3] * dy + m.R[6], m.R[1] * dx + m.R[4] * dy + m.R[7],
                                 m.R[2] * dx + m.R[5] * dy + m.R[8]};
      const double n = detail::norm3(d);
      Ray r;
      r.origin = c;
      r.dir = {static_cast<float>(d[0] / n), static_cast<float>(d[1] / n), static_cast<float>(d[2] / n)};
      rays.push_back(r);
    }
  return rays;
}

// ---------------------------------------------------------------------------
// Differentiable camera: tensors end to end, so the image gradient reaches
// the camera generator
// ---------------------------------------------------------------------------

// Scalar-per-ray camera frame built from tensor-valued pose components.
struct DiffCamera {
  Tensor center;  // [3]
  Tensor rot;     // [3,3] world-to-camera
};

// cos/sin of rotation and elevation plus radius, each a scalar tensor.
// Closed-form up-right look-at frame; valid while cos(alpha_e) > 0, which the
// camera generator's elevation clamp guarantees.
inline DiffCamera assemble_camera_diff(const Tensor& radius, const Tensor& cos_rot, const Tensor& sin_rot,
                                       const Tensor& cos_el, const Tensor& sin_el) {
  Tensor zero = Tensor::scalar(0.0f);
  auto r1 = [&](const Tensor& a, const Tensor& b, const Tensor& c) {
    return concat({reshape(a, {1}), reshape(b, {1}), reshape(c, {1})}, 0);
  };
  // rows: s = (ca, 0, -sa); y = (se*sa, -ce, se*ca); f = -(ce*sa, se, ce*ca)
  Tensor row_s = r1(cos_rot, zero, negate(sin_rot));
  Tensor row_y = r1(mul(sin_el, sin_rot), negate(cos_el), mul(sin_el, cos_rot));
  Tensor row_f = r1(negate(mul(cos_el, sin_rot)), negate(sin_el), negate(mul(cos_el, cos_rot)));
  DiffCamera cam;
  cam.rot = reshape(concat({row_s, row_y, row_f}, 0), {3, 3});
  cam.center = mul(negate(row_f), radius);  // center = r * (-forward)
  return cam;
}

// Ray origins/dirs for a set of pixel centers. pixel_uv: [N,2] constant pixel
// offsets (u+0.5, v+0.5); focal tensors are in pixels at this resolution.
struct DiffRays {
  Tensor origins;  // [N,3]
  Tensor dirs;     // [N,3] unit
};

inline DiffRays rays_diff(const DiffCamera& cam, const Tensor& pixel_uv, const Tensor& fx_px,
                          const Tensor& fy_px, float cx, float cy) {
  const int64_t n = pixel_uv.dim(0);
  Tensor u = slice(pixel_uv, 1, 0, 1);  // [N,1]
  Tensor v = slice(pixel_uv, 1, 1, 1);
  Tensor dx = div(shift(u, -cx), broadcast_to(reshape(fx_px, {}), Shape{n, 1}));
  Tensor dy = div(shift(v, -cy), broadcast_to(reshape(fy_px, {}), Shape{n, 1}));
  Tensor ones = Tensor::ones({n, 1});
  Tensor dc = concat({dx, dy, ones}, 1);        // [N,3] camera-space dirs
  Tensor dw = matmul(dc, cam.rot);              // rows = R^T dc
  Tensor norm = sqrt(reduce_sum(square(dw), 1));  // [N]
  Tensor dirs = div(dw, broadcast_axis(norm, 1, 3));
  DiffRays out;
  out.dirs = dirs;
  out.origins = broadcast_to(cam.center, Shape{n, 3});
  return out;
}

// Constant [N,2] tensor of pixel centers for a full image, row-major.
inline Tensor pixel_grid(int width, int height) {
  Tensor g = Tensor::zeros({static_cast<int64_t>(width) * height, 2});
  float* p = g.data();
  for (int j = 0; j < height; ++j)
    for (int i = 0; i < width; ++i) {
      *p++ = static_cast<float>(i) + 0.5f;
      *p++ = static_cast<float>(j) + 0.5f;
    }
  return g;
}

// ---------------------------------------------------------------------------
// Camera prior
// ---------------------------------------------------------------------------

struct DistSpec {
  enum class Kind { Gaussian, Uniform, Fixed };
  Kind kind = Kind::Fixed;
  double a = 0.0;  // mu | lo | value
  double b = 0.0;  // sigma | hi | unused

  static DistSpec gaussian(double mu, double sigma) { return {Kind::Gaussian, mu, sigma}; }
  static DistSpec uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
  static DistSpec fixed(double v) { return {Kind::Fixed, v, 0.0}; }

  bool is_fixed() const { return kind == Kind::Fixed; }

  double sample(Rng& rng) const {
    switch (kind) {
      case Kind::Gaussian: return rng.normal(a, b);
      case Kind::Uniform: return rng.uniform(a, b);
      case Kind::Fixed: return a;
    }
    return a;
  }

  double mean() const {
    switch (kind) {
      case Kind::Gaussian: return a;
      case Kind::Uniform: return 0.5 * (a + b);
      case Kind::Fixed: return a;
    }
    return a;
  }
};

inline float wrap_angle(float a) {
  double x = std::fmod(static_cast<double>(a) + M_PI, 2.0 * M_PI);
  if (x < 0) x += 2.0 * M_PI;
  return static_cast<float>(x - M_PI);
}

// Per-component camera distribution. Focal components are resolution-relative.
struct CameraPrior {
  DistSpec focal_x = DistSpec::fixed(1.2);
  DistSpec focal_y = DistSpec::fixed(1.2);
  bool tie_focal = true;  // fy duplicates fx
  DistSpec radius = DistSpec::gaussian(0.75, 0.05);
  DistSpec rotation = DistSpec::uniform(-M_PI, M_PI);
  DistSpec elevation = DistSpec::gaussian(0.0, 0.25);
  bool rot360 = false;  // rotation handled on SO(2) downstream

  // hard domains applied after sampling
  double radius_lo = 0.05, radius_hi = 0.999;
  double elevation_lo = -M_PI / 2, elevation_hi = M_PI / 2;
  double focal_lo = 0.05;

  // canonical flat vector layout: (fx, fy, r_cam, alpha_r, alpha_e)
  static constexpr int kDim = 5;
};

struct PriorSample {
  std::array<float, CameraPrior::kDim> params;  // canonical 5-vector
  CameraPose pose;
  CameraIntr intr;  // at the resolution passed to sample_prior
};

inline PriorSample sample_prior(const CameraPrior& prior, Rng& rng, int width, int height) {
  const double fx = std::max(prior.focal_x.sample(rng), prior.focal_lo);
  const double fy = prior.tie_focal ? fx : std::max(prior.focal_y.sample(rng), prior.focal_lo);
  const double r = std::clamp(prior.radius.sample(rng), prior.radius_lo, prior.radius_hi);
  const double rot = wrap_angle(static_cast<float>(prior.rotation.sample(rng)));
  const double el = std::clamp(prior.elevation.sample(rng), prior.elevation_lo, prior.elevation_hi);

  PriorSample s;
  s.params = {static_cast<float>(fx), static_cast<float>(fy), static_cast<float>(r),
              static_cast<float>(rot), static_cast<float>(el)};
  s.pose.r_cam = s.params[2];
  s.pose.alpha_r = s.params[3];
  s.pose.alpha_e = s.params[4];
  if (prior.rot360) {
    const float ca = std::cos(s.pose.alpha_r), sa = std::sin(s.pose.alpha_r);
    s.pose.rot2x2 = {ca, -sa, sa, ca};
  }
  s.intr.width = width;
  s.intr.height = height;
  s.intr.fx = static_cast<float>(fx * width);
  s.intr.fy = static_cast<float>(fy * width);
  return s;
}

}  // namespace campari
