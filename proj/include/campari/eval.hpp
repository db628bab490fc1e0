#pragma once

// Camera-distribution recovery metrics: per-parameter 1-Wasserstein distances
// between predicted camera marginals and sidecar ground truth, with rotation
// aligned over a circular shift grid. Prior-vs-truth baselines quantify how
// much of the gap the camera generator closed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "campari/camera_generator.hpp"
#include "campari/datasets.hpp"
#include "campari/stats.hpp"

namespace campari {

struct CameraEvalReport {
  // predicted vs ground truth
  double w1_rotation = 0.0;
  double w1_elevation = 0.0;
  double w1_radius = 0.0;
  double rotation_shift = 0.0;  // alignment offset applied to predictions
  // prior vs ground truth (baseline)
  double w1_rotation_prior = 0.0;
  double w1_elevation_prior = 0.0;
  double w1_radius_prior = 0.0;

  Marginals predicted;
  Marginals prior_samples;
  std::vector<double> gt_rotation, gt_elevation, gt_radius;
};

// `camgen` may be null (ablation: predictions equal the prior).
inline CameraEvalReport eval_cameras(const CameraGenerator* camgen, const CameraPrior& prior,
                                     const std::vector<PoseRecord>& gt, int64_t n_samples, Rng& rng) {
  if (gt.empty()) throw std::invalid_argument("eval_cameras: empty ground-truth record set");
  CameraEvalReport r;
  for (const auto& p : gt) {
    r.gt_rotation.push_back(p.alpha_r);
    r.gt_elevation.push_back(p.alpha_e);
    r.gt_radius.push_back(p.r_cam);
  }

  // same prior draws feed both the baseline and the generator
  Rng rng_pred = rng.split();
  Rng rng_prior = rng_pred;
  if (camgen) {
    r.predicted = predicted_marginals(*camgen, prior, n_samples, rng_pred);
  } else {
    CamGenConfig cfg = CamGenConfig::from_prior(prior);
    Rng scratch(1);
    CameraGenerator identity(cfg, ClampSpec::defaults(0.05f, static_cast<float>(prior.focal_x.mean())),
                             scratch);
    identity.zero_head();
    r.predicted = predicted_marginals(identity, prior, n_samples, rng_pred);
  }
  {
    const int64_t chunk = 65536;
    for (int64_t done = 0; done < n_samples; done += chunk) {
      const int64_t len = std::min(chunk, n_samples - done);
      Tensor rows = sample_prior_batch(prior, rng_prior, len);
      for (int64_t i = 0; i < len; ++i) {
        const float* row = rows.data() + i * CameraPrior::kDim;
        r.prior_samples.focal.push_back(row[0]);
        r.prior_samples.radius.push_back(row[2]);
        r.prior_samples.rotation.push_back(row[3]);
        r.prior_samples.elevation.push_back(row[4]);
      }
    }
  }

  auto circ = circular_w1_distance(r.predicted.rotation, r.gt_rotation);
  r.w1_rotation = circ.distance;
  r.rotation_shift = circ.shift;
  r.w1_elevation = w1_distance(r.predicted.elevation, r.gt_elevation);
  r.w1_radius = w1_distance(r.predicted.radius, r.gt_radius);

  r.w1_rotation_prior = circular_w1_distance(r.prior_samples.rotation, r.gt_rotation).distance;
  r.w1_elevation_prior = w1_distance(r.prior_samples.elevation, r.gt_elevation);
  r.w1_radius_prior = w1_distance(r.prior_samples.radius, r.gt_radius);
  return r;
}

inline void write_eval_report(const std::string& dir, const CameraEvalReport& r, int bins = 60) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir + "/report.txt");
    f << "camera distribution recovery (1-Wasserstein, radians / scene units)\n";
    f << "rotation:  predicted vs truth = " << r.w1_rotation << "  (prior vs truth = "
      << r.w1_rotation_prior << ", alignment shift = " << r.rotation_shift << ")\n";
    f << "elevation: predicted vs truth = " << r.w1_elevation << "  (prior vs truth = "
      << r.w1_elevation_prior << ")\n";
    f << "radius:    predicted vs truth = " << r.w1_radius << "  (prior vs truth = "
      << r.w1_radius_prior << ")\n";
  }
  {
    std::ofstream f(dir + "/histograms.csv");
    f << "parameter,bin_lo,bin_hi,prior,predicted,ground_truth\n";
    struct Row {
      const char* name;
      const std::vector<double>*prior, *pred, *gt;
      double lo, hi;
    };
    const Row rows[] = {
        {"rotation", &r.prior_samples.rotation, &r.predicted.rotation, &r.gt_rotation, -M_PI, M_PI},
        {"elevation", &r.prior_samples.elevation, &r.predicted.elevation, &r.gt_elevation, -M_PI / 2,
         M_PI / 2},
        {"radius", &r.prior_samples.radius, &r.predicted.radius, &r.gt_radius, 0.0, 1.0},
    };
    for (const auto& row : rows) {
      auto hp = histogram(*row.prior, row.lo, row.hi, bins);
      auto hq = histogram(*row.pred, row.lo, row.hi, bins);
      auto hg = histogram(*row.gt, row.lo, row.hi, bins);
      const double w = (row.hi - row.lo) / bins;
      for (int b = 0; b < bins; ++b) {
        f << row.name << "," << row.lo + b * w << "," << row.lo + (b + 1) * w << ","
          << static_cast<double>(hp[static_cast<size_t>(b)]) / static_cast<double>(row.prior->size())
          << ","
          << static_cast<double>(hq[static_cast<size_t>(b)]) / static_cast<double>(row.pred->size())
          << ","
          << static_cast<double>(hg[static_cast<size_t>(b)]) / static_cast<double>(row.gt->size())
          << "\n";
      }
    }
  }
}

}  // namespace campari
