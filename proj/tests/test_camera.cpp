#include <gtest/gtest.h>

#include <cmath>

#include "campari/camera.hpp"
#include "testing/finite_difference.hpp"

using namespace campari;

namespace {

double dot3(const std::array<float, 3>& a, const std::array<float, 3>& b) {
  return static_cast<double>(a[0]) * b[0] + static_cast<double>(a[1]) * b[1] +
         static_cast<double>(a[2]) * b[2];
}
double norm3(const std::array<float, 3>& a) { return std::sqrt(dot3(a, a)); }

// max |R^T R - I|
double orthonormality_error(const std::array<float, 9>& R) {
  double worst = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += static_cast<double>(R[k * 3 + i]) * R[k * 3 + j];
      worst = std::max(worst, std::fabs(s - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

double det3(const std::array<float, 9>& R) {
  return static_cast<double>(R[0]) * (static_cast<double>(R[4]) * R[8] - static_cast<double>(R[5]) * R[7]) -
         static_cast<double>(R[1]) * (static_cast<double>(R[3]) * R[8] - static_cast<double>(R[5]) * R[6]) +
         static_cast<double>(R[2]) * (static_cast<double>(R[3]) * R[7] - static_cast<double>(R[4]) * R[6]);
}

CameraIntr test_intr(int res = 32, float f_rel = 1.2f) {
  CameraIntr intr;
  intr.width = intr.height = res;
  intr.fx = intr.fy = f_rel * res;
  return intr;
}

}  // namespace

TEST(PoseToMatrices, AxisAlignedCenters) {
  CameraPose p;
  p.r_cam = 0.75f;
  p.alpha_r = 0.0f;
  p.alpha_e = 0.0f;
  auto m = pose_to_matrices(p, test_intr());
  auto c = m.center();
  EXPECT_NEAR(c[0], 0.0f, 1e-6);
  EXPECT_NEAR(c[1], 0.0f, 1e-6);
  EXPECT_NEAR(c[2], 0.75f, 1e-6);
  // viewing direction toward the origin is -z in world coordinates
  std::array<float, 3> view = {m.R[6], m.R[7], m.R[8]};  // camera +z row
  EXPECT_NEAR(view[0], 0.0f, 1e-6);
  EXPECT_NEAR(view[1], 0.0f, 1e-6);
  EXPECT_NEAR(view[2], -1.0f, 1e-6);

  p.alpha_r = static_cast<float>(M_PI / 2);
  auto m2 = pose_to_matrices(p, test_intr());
  auto c2 = m2.center();
  EXPECT_NEAR(c2[0], 0.75f, 1e-6);
  EXPECT_NEAR(c2[1], 0.0f, 1e-6);
  EXPECT_NEAR(c2[2], 0.0f, 1e-6);
}

TEST(PoseToMatrices, LookAtPropertyOnRandomPoses) {
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    CameraPose p;
    p.r_cam = static_cast<float>(rng.uniform(0.55, 0.95));
    p.alpha_r = static_cast<float>(rng.uniform(-M_PI, M_PI));
    p.alpha_e = static_cast<float>(rng.uniform(-M_PI / 2 + 0.02, M_PI / 2 - 0.02));
    auto m = pose_to_matrices(p, test_intr());

    ASSERT_LT(orthonormality_error(m.R), 1e-5);
    ASSERT_NEAR(det3(m.R), 1.0, 1e-5);

    auto c = m.center();
    ASSERT_NEAR(norm3(c), p.r_cam, 1e-5);

    // viewing the origin: R * (0 - c)/|c| = (0, 0, 1) in camera coordinates
    std::array<float, 3> f = {-c[0] / static_cast<float>(norm3(c)), -c[1] / static_cast<float>(norm3(c)),
                              -c[2] / static_cast<float>(norm3(c))};
    std::array<float, 3> fc = {m.R[0] * f[0] + m.R[1] * f[1] + m.R[2] * f[2],
                               m.R[3] * f[0] + m.R[4] * f[1] + m.R[5] * f[2],
                               m.R[6] * f[0] + m.R[7] * f[1] + m.R[8] * f[2]};
    ASSERT_NEAR(fc[0], 0.0f, 1e-5);
    ASSERT_NEAR(fc[1], 0.0f, 1e-5);
    ASSERT_NEAR(fc[2], 1.0f, 1e-5);

    // round trip
    CameraPose q = recover_pose(m);
    ASSERT_NEAR(q.r_cam, p.r_cam, 1e-4);
    ASSERT_NEAR(q.alpha_e, p.alpha_e, 1e-4);
    float dr = wrap_angle(q.alpha_r - p.alpha_r);
    ASSERT_NEAR(dr, 0.0f, 1e-4);
  }
}

TEST(PoseToMatrices, PoleFallbackIsWellFormed) {
  CameraPose p;
  p.r_cam = 0.75f;
  p.alpha_r = 0.3f;
  p.alpha_e = static_cast<float>(M_PI / 2);
  auto m = pose_to_matrices(p, test_intr());
  EXPECT_LT(orthonormality_error(m.R), 1e-5);
  EXPECT_NEAR(det3(m.R), 1.0, 1e-5);
}

TEST(ProjectSo2, IdentityAndScaleInvariance) {
  So2Result r = project_so2({1, 0, 0, 1});
  EXPECT_FALSE(r.degenerate);
  EXPECT_NEAR(r.theta, 0.0f, 1e-7);

  const float t0 = 0.7f;
  const float c = std::cos(t0), s = std::sin(t0);
  So2Result r2 = project_so2({2 * c, -2 * s, 2 * s, 2 * c});
  EXPECT_NEAR(r2.theta, t0, 1e-6);

  So2Result deg = project_so2({0.5f, 0.2f, 0.2f, -0.5f});
  EXPECT_TRUE(deg.degenerate);
  EXPECT_FLOAT_EQ(deg.rot[0], 1.0f);
}

TEST(ProjectSo2, RandomMatricesProjectToRotations) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    std::array<float, 4> m;
    for (auto& v : m) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    So2Result r = project_so2(m);
    if (r.degenerate) continue;
    // orthogonal with det +1
    const auto& q = r.rot;
    EXPECT_NEAR(q[0] * q[0] + q[2] * q[2], 1.0f, 1e-5);
    EXPECT_NEAR(q[1] * q[1] + q[3] * q[3], 1.0f, 1e-5);
    EXPECT_NEAR(q[0] * q[1] + q[2] * q[3], 0.0f, 1e-5);
    EXPECT_NEAR(q[0] * q[3] - q[1] * q[2], 1.0f, 1e-5);
    // idempotent
    So2Result rr = project_so2(r.rot);
    EXPECT_NEAR(rr.theta, r.theta, 1e-6);
  }
}

TEST(GenerateRays, PinholeGeometry) {
  CameraPose p;
  p.r_cam = 0.75f;
  p.alpha_r = 0.4f;
  p.alpha_e = 0.2f;
  const CameraIntr intr = test_intr(32, 1.2f);
  auto m = pose_to_matrices(p, intr);
  auto rays = generate_rays(m, intr);
  ASSERT_EQ(rays.size(), 32u * 32u);

  const auto c = m.center();
  std::array<float, 3> axis = {m.R[6], m.R[7], m.R[8]};
  for (const auto& r : rays) {
    ASSERT_NEAR(norm3(r.dir), 1.0, 1e-6);
    ASSERT_NEAR(r.origin[0], c[0], 1e-6);  // pinhole: common origin
    ASSERT_NEAR(r.origin[1], c[1], 1e-6);
    ASSERT_NEAR(r.origin[2], c[2], 1e-6);
  }

  // a ray through the exact image center lies on the viewing axis; the grid
  // has no such pixel (W even), so check the half-pixel-offset ray directly
  {
    CameraIntr one;
    one.width = one.height = 1;
    one.fx = one.fy = intr.fx;
    // single pixel centered at (0.5, 0.5) with cx=cy=0.5: dir = axis
    auto center_ray = generate_rays(m, one)[0];
    EXPECT_NEAR(center_ray.dir[0], axis[0], 1e-5);
    EXPECT_NEAR(center_ray.dir[1], axis[1], 1e-5);
    EXPECT_NEAR(center_ray.dir[2], axis[2], 1e-5);
  }

  // corner-pixel angle against the pinhole oracle:
  // tan(angle) = |offset| / f for offset = ((0.5 - cx)/fx, (0.5 - cy)/fy)
  const double ox = (0.5 - intr.cx()) / intr.fx;
  const double oy = (0.5 - intr.cy()) / intr.fy;
  const double expected = std::atan(std::sqrt(ox * ox + oy * oy));
  const double got = std::acos(std::clamp(dot3(rays[0].dir, axis), -1.0, 1.0));
  EXPECT_NEAR(got, expected, 1e-4);
}

TEST(DiffCameraPath, MatchesFloatPath) {
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    CameraPose p;
    p.r_cam = static_cast<float>(rng.uniform(0.6, 0.9));
    p.alpha_r = static_cast<float>(rng.uniform(-M_PI, M_PI));
    p.alpha_e = static_cast<float>(rng.uniform(-1.2, 1.2));
    CameraIntr intr = test_intr(8, 1.3f);
    auto m = pose_to_matrices(p, intr);
    auto rays = generate_rays(m, intr);

    DiffCamera cam = assemble_camera_diff(
        Tensor::scalar(p.r_cam), Tensor::scalar(std::cos(p.alpha_r)), Tensor::scalar(std::sin(p.alpha_r)),
        Tensor::scalar(std::cos(p.alpha_e)), Tensor::scalar(std::sin(p.alpha_e)));
    DiffRays dr = rays_diff(cam, pixel_grid(8, 8), Tensor::scalar(intr.fx), Tensor::scalar(intr.fy),
                            intr.cx(), intr.cy());
    for (size_t k = 0; k < rays.size(); ++k) {
      for (int d = 0; d < 3; ++d) {
        ASSERT_NEAR(dr.dirs[static_cast<int64_t>(k) * 3 + d], rays[k].dir[d], 1e-5) << "ray " << k;
        ASSERT_NEAR(dr.origins[static_cast<int64_t>(k) * 3 + d], rays[k].origin[d], 1e-5);
      }
    }
  }
}

TEST(DiffCameraPath, RayJacobianMatchesFiniteDifferences) {
  // directions are a smooth function of (alpha_r, alpha_e)
  Tensor angles({2}, {0.4f, -0.3f});

  auto loss_of = [&](const Tensor& ang, Tape* tape) {
    Tensor ar = slice(ang, 0, 0, 1);
    Tensor ae = slice(ang, 0, 1, 1);
    DiffCamera cam = assemble_camera_diff(Tensor::scalar(0.75f), cos(ar), sin(ar), cos(ae), sin(ae));
    DiffRays dr = rays_diff(cam, pixel_grid(4, 4), Tensor::scalar(5.0f), Tensor::scalar(5.0f), 2.0f, 2.0f);
    Tensor w = Tensor::zeros({16, 3});
    for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = 0.5f + 0.03f * static_cast<float>(i % 7);
    (void)tape;
    return reduce_sum_all(mul(dr.dirs, w));
  };

  Tape tape;
  Tensor at = tape.watch(angles);
  tape.backward(loss_of(at, &tape));
  Tensor g = tape.grad(at);

  auto fd = campari::testing::fd_gradient(
      [&] { return static_cast<double>(loss_of(angles, nullptr).value()); }, angles.data(), 2, 1e-3);
  auto cmp = campari::testing::fd_compare(g.data(), fd, 1e-3, 5e-5);
  EXPECT_TRUE(cmp.ok) << "max rel err " << cmp.max_rel;
}

TEST(SamplePrior, FixedComponentsAreDeterministic) {
  CameraPrior prior;
  prior.focal_x = DistSpec::fixed(1.1);
  prior.radius = DistSpec::fixed(0.8);
  prior.rotation = DistSpec::fixed(0.5);
  prior.elevation = DistSpec::fixed(-0.2);
  Rng rng(1);
  auto s1 = sample_prior(prior, rng, 32, 32);
  auto s2 = sample_prior(prior, rng, 32, 32);
  for (int i = 0; i < CameraPrior::kDim; ++i) EXPECT_FLOAT_EQ(s1.params[i], s2.params[i]);
  EXPECT_FLOAT_EQ(s1.pose.r_cam, 0.8f);
  EXPECT_FLOAT_EQ(s1.intr.fx, 1.1f * 32);
}

TEST(SamplePrior, UniformRotationCoversTheFullRange) {
  CameraPrior prior;
  prior.rotation = DistSpec::uniform(-M_PI, M_PI);
  Rng rng(71);
  double sum = 0.0, lo = 10.0, hi = -10.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    auto s = sample_prior(prior, rng, 16, 16);
    sum += s.pose.alpha_r;
    lo = std::min(lo, static_cast<double>(s.pose.alpha_r));
    hi = std::max(hi, static_cast<double>(s.pose.alpha_r));
  }
  EXPECT_LT(std::fabs(sum / n), 0.02);
  EXPECT_LT(lo, -M_PI + 0.01);
  EXPECT_GT(hi, M_PI - 0.01);
}

TEST(SamplePrior, GaussianElevationMatchesNormalCdf) {
  CameraPrior prior;
  prior.elevation = DistSpec::gaussian(0.0, 0.25);
  Rng rng(72);
  const int n = 100000;
  int inside = 0;
  for (int i = 0; i < n; ++i) {
    auto s = sample_prior(prior, rng, 16, 16);
    if (std::fabs(s.pose.alpha_e) <= 0.25f) ++inside;
  }
  // oracle: Phi(1) - Phi(-1) = erf(1/sqrt(2)) = 0.682689...
  const double expected = std::erf(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(static_cast<double>(inside) / n, expected, 0.01);
}

TEST(SamplePrior, HardDomainsRespected) {
  CameraPrior prior;
  prior.elevation = DistSpec::gaussian(1.4, 0.5);  // frequently exceeds pi/2
  prior.radius = DistSpec::gaussian(0.9, 0.3);
  Rng rng(73);
  for (int i = 0; i < 20000; ++i) {
    auto s = sample_prior(prior, rng, 16, 16);
    ASSERT_LE(s.pose.alpha_e, static_cast<float>(M_PI / 2));
    ASSERT_GE(s.pose.alpha_e, static_cast<float>(-M_PI / 2));
    ASSERT_GT(s.pose.r_cam, 0.0f);
    ASSERT_LT(s.pose.r_cam, 1.0f);
    ASSERT_GE(s.pose.alpha_r, static_cast<float>(-M_PI));
    ASSERT_LT(s.pose.alpha_r, static_cast<float>(M_PI) + 1e-6f);
  }
}
