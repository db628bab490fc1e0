#pragma once

// Image ingestion and a procedural synthetic-scene renderer. The synthetic
// renderer draws poses from mixtures of Gaussians, shades with a fixed light
// (Lambertian plus ambient) using its own ray-primitive intersections, and
// records ground-truth poses in a CSV sidecar that only evaluation reads.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "campari/camera.hpp"
#include "campari/gan_training.hpp"
#include "campari/image_io.hpp"
#include "campari/rng.hpp"
#include "campari/tensor.hpp"

namespace campari {

struct GaussianMixture {
  struct Component {
    double weight, mu, sigma;
  };
  std::vector<Component> components;

  void validate() const {
    if (components.empty()) throw std::invalid_argument("mixture: no components");
    double total = 0.0;
    for (const auto& c : components) {
      if (c.sigma <= 0.0) throw std::invalid_argument("mixture: sigma must be positive");
      total += c.weight;
    }
    if (std::fabs(total - 1.0) > 1e-6) throw std::invalid_argument("mixture: weights must sum to 1");
  }

  double sample(Rng& rng) const {
    double u = rng.uniform();
    for (const auto& c : components) {
      if (u < c.weight) return rng.normal(c.mu, c.sigma);
      u -= c.weight;
    }
    return components.back().mu + components.back().sigma * rng.normal();
  }

  double cdf(double x) const {
    double f = 0.0;
    for (const auto& c : components) f += c.weight * normal_cdf(x, c.mu, c.sigma);
    return f;
  }

  static GaussianMixture single(double mu, double sigma) { return {{{1.0, mu, sigma}}}; }
};

enum class SceneKind { TexturedSphere, BoxesOnPlane, ChairProxy };

struct SyntheticSpec {
  SceneKind kind = SceneKind::ChairProxy;
  GaussianMixture rotation = GaussianMixture::single(0.0, 1.0);
  GaussianMixture elevation = GaussianMixture::single(0.3, 0.15);
  double radius = 0.75;     // fixed
  double focal = 1.2;       // fixed, resolution-relative
  int n_images = 1000;
  int resolution = 32;
  uint64_t seed = 1;
};

struct PoseRecord {
  std::string filename;
  float alpha_r, alpha_e, r_cam;
};

// ---------------------------------------------------------------------------
// Analytic primitives for the synthetic shader
// ---------------------------------------------------------------------------

namespace synth {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 normalize(const Vec3& v) {
  const double n = std::sqrt(dot(v, v));
  return {v[0] / n, v[1] / n, v[2] / n};
}

struct Hit {
  bool ok = false;
  double t = 1e30;
  Vec3 normal{};
  std::array<float, 3> albedo{};
};

inline void ray_sphere(const Vec3& o, const Vec3& d, const Vec3& center, double radius,
                       const std::array<float, 3>& albedo, bool checker, Hit& best) {
  const Vec3 oc = {o[0] - center[0], o[1] - center[1], o[2] - center[2]};
  const double b = dot(oc, d);
  const double c = dot(oc, oc) - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0.0) return;
  const double t = -b - std::sqrt(disc);
  if (t <= 1e-6 || t >= best.t) return;
  best.ok = true;
  best.t = t;
  const Vec3 p = {o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]};
  best.normal = normalize({p[0] - center[0], p[1] - center[1], p[2] - center[2]});
  best.albedo = albedo;
  if (checker) {
    // longitude/latitude checker texture
    const double u = std::atan2(best.normal[0], best.normal[2]);
    const double v = std::asin(std::clamp(best.normal[1], -1.0, 1.0));
    const int cell = (static_cast<int>(std::floor(u / (M_PI / 4))) +
                      static_cast<int>(std::floor(v / (M_PI / 4))) + 64) % 2;
    if (cell) best.albedo = {albedo[0] * 0.35f, albedo[1] * 0.35f, albedo[2] * 0.35f};
  }
}

inline void ray_box(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi,
                    const std::array<float, 3>& albedo, Hit& best) {
  double t0 = 1e-6, t1 = best.t;
  int axis = -1;
  bool axis_flip = false;
  for (int i = 0; i < 3; ++i) {
    const double inv = 1.0 / d[i];
    double ta = (lo[i] - o[i]) * inv;
    double tb = (hi[i] - o[i]) * inv;
    bool flip = false;
    if (ta > tb) {
      std::swap(ta, tb);
      flip = true;
    }
    if (ta > t0) {
      t0 = ta;
      axis = i;
      axis_flip = flip;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return;
  }
  if (axis < 0 || t0 >= best.t) return;
  best.ok = true;
  best.t = t0;
  best.normal = {0, 0, 0};
  best.normal[axis] = axis_flip ? 1.0 : -1.0;
  best.albedo = albedo;
}

inline void ray_disk(const Vec3& o, const Vec3& d, double y, double radius,
                     const std::array<float, 3>& albedo, Hit& best) {
  if (std::fabs(d[1]) < 1e-12) return;
  const double t = (y - o[1]) / d[1];
  if (t <= 1e-6 || t >= best.t) return;
  const double px = o[0] + t * d[0], pz = o[2] + t * d[2];
  if (px * px + pz * pz > radius * radius) return;
  best.ok = true;
  best.t = t;
  best.normal = {0, d[1] > 0 ? -1.0 : 1.0, 0};
  best.albedo = albedo;
  const int cell = (static_cast<int>(std::floor(px / 0.12)) + static_cast<int>(std::floor(pz / 0.12)) +
                    1024) % 2;
  if (cell) best.albedo = {albedo[0] * 0.5f, albedo[1] * 0.5f, albedo[2] * 0.5f};
}

inline Hit trace_scene(SceneKind kind, const Vec3& o, const Vec3& d) {
  Hit h;
  switch (kind) {
    case SceneKind::TexturedSphere:
      ray_sphere(o, d, {0, 0, 0}, 0.4, {0.85f, 0.55f, 0.25f}, true, h);
      break;
    case SceneKind::BoxesOnPlane:
      ray_disk(o, d, -0.3, 0.45, {0.5f, 0.5f, 0.55f}, h);
      ray_box(o, d, {-0.28, -0.3, -0.16}, {-0.04, -0.02, 0.08}, {0.8f, 0.3f, 0.25f}, h);
      ray_box(o, d, {0.02, -0.3, -0.2}, {0.26, 0.1, 0.04}, {0.25f, 0.45f, 0.8f}, h);
      break;
    case SceneKind::ChairProxy: {
      // seat + back + four legs, cuboids inside the foreground sphere
      const std::array<float, 3> wood = {0.8f, 0.45f, 0.25f};
      const std::array<float, 3> dark = {0.35f, 0.25f, 0.18f};
      ray_box(o, d, {-0.21, 0.0, -0.21}, {0.21, 0.06, 0.21}, wood, h);         // seat
      ray_box(o, d, {-0.21, 0.06, 0.15}, {0.21, 0.38, 0.21}, wood, h);         // back
      for (double sx : {-1.0, 1.0})
        for (double sz : {-1.0, 1.0})
          ray_box(o, d, {sx * 0.18 - 0.03, -0.28, sz * 0.18 - 0.03},
                  {sx * 0.18 + 0.03, 0.0, sz * 0.18 + 0.03}, dark, h);  // legs
      break;
    }
  }
  return h;
}

inline std::array<float, 3> shade(const Hit& h) {
  if (!h.ok) return {0.0f, 0.0f, 0.0f};  // miss: black background
  static const Vec3 light = normalize({0.4, 1.0, 0.25});
  const double lambert = std::max(0.0, dot(h.normal, light));
  const double k = 0.25 + 0.75 * lambert;
  return {static_cast<float>(h.albedo[0] * k), static_cast<float>(h.albedo[1] * k),
          static_cast<float>(h.albedo[2] * k)};
}

}  // namespace synth

// Renders one synthetic view.
inline Tensor render_synthetic_view(SceneKind kind, const CameraPose& pose, const CameraIntr& intr) {
  auto mats = pose_to_matrices(pose, intr);
  auto rays = generate_rays(mats, intr);
  Tensor img = Tensor::zeros({intr.height, intr.width, 3});
  float* p = img.data();
  for (const auto& r : rays) {
    const synth::Vec3 o = {r.origin[0], r.origin[1], r.origin[2]};
    const synth::Vec3 d = {r.dir[0], r.dir[1], r.dir[2]};
    const auto c = synth::shade(synth::trace_scene(kind, o, d));
    *p++ = c[0];
    *p++ = c[1];
    *p++ = c[2];
  }
  return img;
}

inline void write_pose_records(const std::string& path, const std::vector<PoseRecord>& records) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("sidecar: cannot open " + path + " for writing");
  f << "filename,alpha_r,alpha_e,r_cam\n";
  for (const auto& r : records)
    f << r.filename << "," << r.alpha_r << "," << r.alpha_e << "," << r.r_cam << "\n";
}

inline std::vector<PoseRecord> read_pose_records(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("sidecar: cannot open " + path);
  std::vector<PoseRecord> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    PoseRecord r;
    std::string field;
    std::getline(ss, r.filename, ',');
    std::getline(ss, field, ',');
    r.alpha_r = std::stof(field);
    std::getline(ss, field, ',');
    r.alpha_e = std::stof(field);
    std::getline(ss, field, ',');
    r.r_cam = std::stof(field);
    out.push_back(std::move(r));
  }
  return out;
}

// Renders spec.n_images views with poses drawn from the mixtures; returns the
// sidecar records (also written to <dir>/poses.csv).
inline std::vector<PoseRecord> generate_synthetic(const SyntheticSpec& spec, const std::string& dir) {
  spec.rotation.validate();
  spec.elevation.validate();
  std::filesystem::create_directories(dir);
  Rng rng(spec.seed);
  std::vector<PoseRecord> records;
  CameraIntr intr;
  intr.width = intr.height = spec.resolution;
  intr.fx = intr.fy = static_cast<float>(spec.focal * spec.resolution);
  for (int i = 0; i < spec.n_images; ++i) {
    CameraPose pose;
    pose.r_cam = static_cast<float>(spec.radius);
    pose.alpha_r = wrap_angle(static_cast<float>(spec.rotation.sample(rng)));
    pose.alpha_e = static_cast<float>(
        std::clamp(spec.elevation.sample(rng), -M_PI / 2 + 1e-3, M_PI / 2 - 1e-3));
    Tensor img = render_synthetic_view(spec.kind, pose, intr);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d.png", i);
    write_png_rgb(dir + "/" + name, img);
    records.push_back({name, pose.alpha_r, pose.alpha_e, pose.r_cam});
  }
  write_pose_records(dir + "/poses.csv", records);
  return records;
}

// ---------------------------------------------------------------------------
// Image store
// ---------------------------------------------------------------------------

// Directory of PNGs; decodes, center-crops square, area-downsamples to the
// requested stage resolution. Pose sidecars are never touched here.
class ImageStore : public RealImageSource {
 public:
  explicit ImageStore(const std::string& dir) : dir_(dir) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".png") files_.push_back(e.path().filename().string());
    }
    std::sort(files_.begin(), files_.end());
    if (files_.empty()) throw std::runtime_error("image store: no .png files in " + dir);
  }

  int64_t size() const override { return static_cast<int64_t>(files_.size()); }
  const std::string& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

  Tensor batch(const std::vector<int64_t>& indices, int resolution) const override {
    Tensor out = Tensor::zeros({static_cast<int64_t>(indices.size()), resolution, resolution, 3});
    for (size_t b = 0; b < indices.size(); ++b) {
      const int64_t ix = indices[b];
      if (ix < 0 || ix >= size()) throw std::runtime_error("image store: index out of range");
      const std::string path = dir_ + "/" + files_[static_cast<size_t>(ix)];
      Tensor img;
      try {
        img = read_png_rgb(path);
      } catch (const ImageIoError& e) {
        throw std::runtime_error("image store: unreadable file " + path + ": " + e.what());
      }
      Tensor prepared = prepare(img, resolution, path);
      std::copy(prepared.data(), prepared.data() + prepared.numel(),
                out.data() + static_cast<int64_t>(b) * prepared.numel());
    }
    return out;
  }

  // center-crop to square, then box-filter downsample
  static Tensor prepare(const Tensor& img, int resolution, const std::string& path_for_errors) {
    const int64_t h = img.dim(0), w = img.dim(1);
    const int64_t side = std::min(h, w);
    const int64_t y0 = (h - side) / 2, x0 = (w - side) / 2;
    if (side % resolution != 0)
      throw std::runtime_error("image store: " + path_for_errors + " crop side " +
                               std::to_string(side) + " is not a multiple of resolution " +
                               std::to_string(resolution));
    const int64_t k = side / resolution;
    Tensor out = Tensor::zeros({resolution, resolution, 3});
    const float inv = 1.0f / static_cast<float>(k * k);
    for (int64_t y = 0; y < resolution; ++y)
      for (int64_t x = 0; x < resolution; ++x)
        for (int64_t c = 0; c < 3; ++c) {
          float acc = 0.0f;
          for (int64_t dy = 0; dy < k; ++dy)
            for (int64_t dx = 0; dx < k; ++dx)
              acc += img[((y0 + y * k + dy) * w + (x0 + x * k + dx)) * 3 + c];
          out.data()[(y * resolution + x) * 3 + c] = acc * inv;
        }
    return out;
  }

 private:
  std::string dir_;
  std::vector<std::string> files_;
};

}  // namespace campari
