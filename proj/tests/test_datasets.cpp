#include <gtest/gtest.h>

#include <filesystem>

#include "campari/datasets.hpp"

using namespace campari;

namespace {

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST(PngRoundTrip, RgbValuesSurvive) {
  const std::string dir = temp_dir("campari_png");
  Rng rng(1);
  Tensor img = Tensor::rand_uniform({9, 7, 3}, rng);
  write_png_rgb(dir + "/t.png", img);
  Tensor back = read_png_rgb(dir + "/t.png");
  ASSERT_EQ(back.shape(), img.shape());
  for (int64_t i = 0; i < img.numel(); ++i) ASSERT_NEAR(back[i], img[i], 0.5f / 255.0f + 1e-6f);
  std::filesystem::remove_all(dir);
}

TEST(PngRoundTrip, SolidWhiteDecodesToOnes) {
  const std::string dir = temp_dir("campari_png_white");
  write_png_rgb(dir + "/white.png", Tensor::ones({4, 4, 3}));
  Tensor back = read_png_rgb(dir + "/white.png");
  for (int64_t i = 0; i < back.numel(); ++i) ASSERT_FLOAT_EQ(back[i], 1.0f);
  std::filesystem::remove_all(dir);
}

TEST(PngRoundTrip, Gray16Writes) {
  const std::string dir = temp_dir("campari_png_gray");
  Tensor depth = Tensor::zeros({4, 4});
  for (int64_t i = 0; i < 16; ++i) depth.data()[i] = static_cast<float>(i) / 15.0f;
  write_png_gray16(dir + "/d.png", depth, 0.0f, 1.0f);
  // 16-bit gray: verify the container header marks bit depth 16, color 0
  std::ifstream f(dir + "/d.png", std::ios::binary);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ASSERT_GT(bytes.size(), 26u);
  EXPECT_EQ(bytes[24], 16);  // bit depth
  EXPECT_EQ(bytes[25], 0);   // grayscale
  std::filesystem::remove_all(dir);
}

TEST(Mixture, ValidatesWeights) {
  GaussianMixture m{{{0.6, 0.0, 0.1}, {0.5, 1.0, 0.1}}};
  EXPECT_THROW(m.validate(), std::invalid_argument);
  GaussianMixture ok{{{0.5, 0.0, 0.1}, {0.5, 1.0, 0.1}}};
  EXPECT_NO_THROW(ok.validate());
  GaussianMixture bad_sigma{{{1.0, 0.0, 0.0}}};
  EXPECT_THROW(bad_sigma.validate(), std::invalid_argument);
}

TEST(GenerateSynthetic, DegenerateMixtureGivesIdenticalImages) {
  const std::string dir = temp_dir("campari_synth_degenerate");
  SyntheticSpec spec;
  spec.kind = SceneKind::ChairProxy;
  spec.rotation = GaussianMixture::single(0.4, 1e-9);
  spec.elevation = GaussianMixture::single(0.3, 1e-9);
  spec.n_images = 3;
  spec.resolution = 16;
  spec.seed = 5;
  generate_synthetic(spec, dir);
  Tensor a = read_png_rgb(dir + "/img_00000.png");
  Tensor b = read_png_rgb(dir + "/img_00001.png");
  Tensor c = read_png_rgb(dir + "/img_00002.png");
  for (int64_t i = 0; i < a.numel(); ++i) {
    ASSERT_FLOAT_EQ(a[i], b[i]);
    ASSERT_FLOAT_EQ(a[i], c[i]);
  }
  std::filesystem::remove_all(dir);
}

TEST(GenerateSynthetic, ElevationHistogramMatchesMixtureCdf) {
  // pose draws against the mixture CDF oracle (KS distance)
  GaussianMixture mix{{{0.5, 0.2, 0.1}, {0.5, 0.7, 0.1}}};
  Rng rng(7);
  std::vector<double> samples;
  for (int i = 0; i < 10000; ++i) samples.push_back(mix.sample(rng));
  const double ks = ks_statistic(samples, [&](double x) { return mix.cdf(x); });
  EXPECT_LT(ks, 0.02);
}

TEST(GenerateSynthetic, BimodalRotationHistogramHasTwoModes) {
  GaussianMixture mix{{{0.5, -M_PI / 2, 0.2}, {0.5, M_PI / 2, 0.2}}};
  Rng rng(9);
  std::vector<double> samples;
  for (int i = 0; i < 20000; ++i) samples.push_back(mix.sample(rng));
  auto hist = histogram(samples, -M_PI, M_PI, 64);
  // find the two local maxima
  const double bin_w = 2.0 * M_PI / 64;
  int best1 = 0;
  for (int i = 1; i < 64; ++i)
    if (hist[static_cast<size_t>(i)] > hist[static_cast<size_t>(best1)]) best1 = i;
  int best2 = -1;
  for (int i = 0; i < 64; ++i) {
    if (std::abs(i - best1) < 8) continue;
    if (best2 < 0 || hist[static_cast<size_t>(i)] > hist[static_cast<size_t>(best2)]) best2 = i;
  }
  const double m1 = -M_PI + (best1 + 0.5) * bin_w;
  const double m2 = -M_PI + (best2 + 0.5) * bin_w;
  const double lo = std::min(m1, m2), hi = std::max(m1, m2);
  EXPECT_NEAR(lo, -M_PI / 2, 0.05 + bin_w);
  EXPECT_NEAR(hi, M_PI / 2, 0.05 + bin_w);
}

TEST(GenerateSynthetic, PixelDeterministicAcrossRuns) {
  const std::string d1 = temp_dir("campari_synth_det1");
  const std::string d2 = temp_dir("campari_synth_det2");
  SyntheticSpec spec;
  spec.n_images = 2;
  spec.resolution = 16;
  spec.seed = 11;
  generate_synthetic(spec, d1);
  generate_synthetic(spec, d2);
  for (const char* f : {"img_00000.png", "img_00001.png"}) {
    Tensor a = read_png_rgb(d1 + "/" + f);
    Tensor b = read_png_rgb(d2 + "/" + f);
    for (int64_t i = 0; i < a.numel(); ++i) ASSERT_FLOAT_EQ(a[i], b[i]);
  }
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST(GenerateSynthetic, SidecarRoundTrip) {
  const std::string dir = temp_dir("campari_synth_sidecar");
  SyntheticSpec spec;
  spec.n_images = 4;
  spec.resolution = 16;
  spec.seed = 13;
  auto records = generate_synthetic(spec, dir);
  auto loaded = read_pose_records(dir + "/poses.csv");
  ASSERT_EQ(loaded.size(), records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(loaded[i].filename, records[i].filename);
    EXPECT_NEAR(loaded[i].alpha_e, records[i].alpha_e, 1e-5);
    EXPECT_NEAR(loaded[i].alpha_r, records[i].alpha_r, 1e-5);
    EXPECT_NEAR(loaded[i].r_cam, records[i].r_cam, 1e-5);
  }
  std::filesystem::remove_all(dir);
}

TEST(LoadBatch, CheckerDownsampleAveragesToHalf) {
  // 2x2 checker tiles at 64^2 downsampled to 32^2 become uniform 0.5
  const std::string dir = temp_dir("campari_checker");
  Tensor checker = Tensor::zeros({64, 64, 3});
  for (int64_t y = 0; y < 64; ++y)
    for (int64_t x = 0; x < 64; ++x) {
      const float v = static_cast<float>((x + y) % 2);
      for (int64_t c = 0; c < 3; ++c) checker.data()[(y * 64 + x) * 3 + c] = v;
    }
  write_png_rgb(dir + "/checker.png", checker);
  ImageStore store(dir);
  Tensor b = store.batch({0}, 32);
  ASSERT_EQ(b.shape(), (Shape{1, 32, 32, 3}));
  for (int64_t i = 0; i < b.numel(); ++i) ASSERT_NEAR(b[i], 0.5f, 1e-6f);
  std::filesystem::remove_all(dir);
}

TEST(LoadBatch, ShapeAndErrors) {
  const std::string dir = temp_dir("campari_loadbatch");
  SyntheticSpec spec;
  spec.n_images = 5;
  spec.resolution = 32;
  spec.seed = 17;
  generate_synthetic(spec, dir);
  ImageStore store(dir);
  EXPECT_EQ(store.size(), 5);
  Tensor b = store.batch({0, 2, 4}, 16);
  EXPECT_EQ(b.shape(), (Shape{3, 16, 16, 3}));
  for (int64_t i = 0; i < b.numel(); ++i) {
    ASSERT_GE(b[i], 0.0f);
    ASSERT_LE(b[i], 1.0f);
  }
  EXPECT_THROW(store.batch({99}, 16), std::runtime_error);

  // unreadable file: error names the path
  {
    std::ofstream bad(dir + "/zzz_bad.png");
    bad << "this is not a png";
  }
  ImageStore store2(dir);
  try {
    store2.batch({5}, 16);  // sorted order puts zzz_bad.png last
    FAIL() << "expected error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("zzz_bad.png"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(SidecarIsolation, TrainingRunsIdenticallyWithAndWithoutSidecars) {
  const std::string dir = temp_dir("campari_isolation");
  SyntheticSpec spec;
  spec.n_images = 8;
  spec.resolution = 16;
  spec.seed = 19;
  generate_synthetic(spec, dir);

  ModelConfig m;
  m.r_fg = 0.5f;
  m.latent_dim = 4;
  m.background = false;
  m.fg_width = 8;
  m.fg_depth = 2;
  m.n_freq_x = 2;
  m.n_freq_d = 1;
  m.camgen_width = 8;
  m.camgen_depth = 2;
  m.disc_channel_div = 32;
  m.prior.focal_x = DistSpec::fixed(1.2);
  m.prior.radius = DistSpec::fixed(0.75);
  TrainConfig tc;
  tc.resolutions = {16};
  tc.stage_switch_iters = {};
  tc.batch_sizes = {2};
  tc.points_start = 4;
  tc.points_max = 4;
  tc.seed = 23;

  auto run = [&] {
    Trainer t(m, tc, std::make_shared<ImageStore>(dir));
    std::vector<float> trace;
    for (int i = 0; i < 6; ++i) {
      StepStats s = t.step();
      trace.push_back(s.loss_g);
      trace.push_back(s.loss_d);
    }
    return trace;
  };

  auto with_sidecar = run();
  std::filesystem::remove(dir + "/poses.csv");  // strip the sidecar mid-experiment
  auto without_sidecar = run();
  EXPECT_EQ(with_sidecar, without_sidecar);
  std::filesystem::remove_all(dir);
}
