// Command-line surface: train, render, eval-cameras, make-dataset,
// print-config. Output lands under <out_root>/<run.name>/{ckpt,logs,renders,
// eval}; the CAMPARI_OUT environment variable overrides the output root.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "campari/checkpoint.hpp"
#include "campari/config.hpp"
#include "campari/datasets.hpp"
#include "campari/eval.hpp"
#include "campari/gan_training.hpp"
#include "campari/image_io.hpp"

namespace fs = std::filesystem;
using namespace campari;

namespace {

std::atomic<bool> g_interrupted{false};
void handle_sigint(int) { g_interrupted = true; }

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = parse_config_file(path);
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config_set(cfg, detail_cfg::trim(kv.substr(0, eq)), detail_cfg::trim(kv.substr(eq + 1)));
  }
  return cfg;
}

std::string out_dir_for(const RunConfig& cfg) {
  const char* env = std::getenv("CAMPARI_OUT");
  const std::string root = env && *env ? env : cfg.out_root;
  return root + "/" + cfg.run_name;
}

void ensure_run_dirs(const std::string& out) {
  for (const char* sub : {"ckpt", "logs", "renders", "eval"})
    fs::create_directories(out + "/" + sub);
}

void save_with_config(const Trainer& trainer, const std::string& cfg_text, const std::string& path) {
  ParamVec all = trainer.snapshot();
  all.push_back({"_config", config_to_tensor(cfg_text)});
  save_checkpoint(path, all);
}

struct LoadedGenerator {
  RunConfig cfg;
  GeneratorModel gen;
};

// Rebuild the generator from the checkpoint's embedded config and restore the
// EMA weights (the evaluation-time parameters).
LoadedGenerator load_generator(const std::string& ckpt_path) {
  ParamVec all = load_checkpoint(ckpt_path);
  const Tensor* cfg_tensor = find_param(all, "_config");
  if (!cfg_tensor)
    throw CheckpointError("checkpoint has no embedded config; cannot rebuild the model");
  LoadedGenerator out{parse_config_text(config_from_tensor(*cfg_tensor)), GeneratorModel()};
  Rng scratch(1);
  out.gen = GeneratorModel(out.cfg.model, scratch);
  ParamVec params;
  out.gen.collect(params);
  for (auto& p : params) {
    const Tensor* src = find_param(all, "ema." + p.name);
    if (!src) src = find_param(all, p.name);
    if (!src) throw CheckpointError("checkpoint is missing tensor " + p.name);
    if (src->numel() != p.value.numel())
      throw CheckpointError("checkpoint tensor " + p.name + " has the wrong shape");
    std::copy(src->data(), src->data() + src->numel(), const_cast<float*>(p.value.data()));
  }
  return out;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& resume) {
  RunConfig cfg = load_config(config_path, sets);
  validate_for_training(cfg);
  if (!fs::exists(cfg.dataset_path))
    throw ConfigError("dataset.path '" + cfg.dataset_path +
                      "' does not exist (run `campari make-dataset` first for synthetic data)");

  const std::string out = out_dir_for(cfg);
  ensure_run_dirs(out);
  const std::string cfg_text = config_reference(cfg);
  {
    std::ofstream f(out + "/config.txt");
    f << cfg_text;
  }

  auto store = std::make_shared<ImageStore>(cfg.dataset_path);
  Trainer trainer(cfg.model, cfg.train, store);
  trainer.set_abort_checkpoint_path(out + "/ckpt/abort.ckpt");
  if (!resume.empty()) trainer.load(resume);

  CsvLogger logger(out + "/logs/train.csv");
  std::signal(SIGINT, handle_sigint);

  std::printf("training '%s' for %lld iterations -> %s\n", cfg.run_name.c_str(),
              static_cast<long long>(cfg.train.total_iters), out.c_str());
  while (trainer.iteration() < cfg.train.total_iters && !g_interrupted) {
    StepStats s = trainer.step();
    if (s.iteration % cfg.log_every == 0) {
      logger.log(s);
      std::printf("iter %6lld  stage %d  loss_g %.4f  loss_d %.4f  r1 %.4f  alpha %.3f\n",
                  static_cast<long long>(s.iteration), s.stage, s.loss_g, s.loss_d, s.r1,
                  s.fg_alpha_mean);
      std::fflush(stdout);
    }
    const int64_t done = s.iteration + 1;
    if (done % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "/ckpt/ckpt_%06lld.ckpt", static_cast<long long>(done));
      save_with_config(trainer, cfg_text, out + name);
      save_with_config(trainer, cfg_text, out + "/ckpt/latest.ckpt");
    }
  }
  save_with_config(trainer, cfg_text, out + "/ckpt/latest.ckpt");
  std::printf("%s at iteration %lld; checkpoint: %s/ckpt/latest.ckpt\n",
              g_interrupted ? "interrupted" : "finished",
              static_cast<long long>(trainer.iteration()), out.c_str());
  return 0;
}

int cmd_make_dataset(const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig cfg = load_config(config_path, sets);
  if (cfg.dataset_path.empty()) throw ConfigError("missing required key 'dataset.path'");
  auto records = generate_synthetic(cfg.synth, cfg.dataset_path);
  std::printf("wrote %zu images + poses.csv to %s\n", records.size(), cfg.dataset_path.c_str());
  return 0;
}

int cmd_render(const std::string& ckpt, const std::string& mode, int count, uint64_t seed,
               const std::vector<std::string>& sets, std::string out_dir) {
  LoadedGenerator lg = load_generator(ckpt);
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value");
    config_set(lg.cfg, detail_cfg::trim(kv.substr(0, eq)), detail_cfg::trim(kv.substr(eq + 1)));
  }
  if (out_dir.empty()) out_dir = out_dir_for(lg.cfg) + "/renders";
  fs::create_directories(out_dir);

  const int res = lg.cfg.train.resolutions.back();
  auto [n_fg, n_bg] =
      schedule_points(std::numeric_limits<int64_t>::max() / 2, lg.cfg.train, lg.cfg.model.background);
  GeneratorModel::RenderSettings rs;
  rs.resolution = res;
  rs.n_fg = n_fg;
  rs.n_bg = n_bg;
  rs.chunk_rays = lg.cfg.train.chunk_rays;

  Rng rng(seed);
  LatentBundle z0 = lg.gen.sample_latents(rng);
  LatentBundle z1 = lg.gen.sample_latents(rng);
  Tensor prior = sample_prior_batch(lg.cfg.model.prior, rng, 1);
  Tensor base_row = lg.gen.predict_cameras(nullptr, prior);
  const ClampSpec clamp = lg.cfg.model.clamps();

  auto row_with = [&](int slot, float v) {
    Tensor row = base_row.clone();
    row.data()[slot] = v;
    return row;
  };
  auto save_rgb = [&](const Tensor& rgb, const std::string& name) {
    write_png_rgb(out_dir + "/" + name, rgb);
  };
  char name[128];

  if (mode == "rotation-sweep" || mode == "elevation-sweep") {
    const bool rot = mode == "rotation-sweep";
    const float lo = rot ? -static_cast<float>(M_PI) : clamp.elev_lo;
    const float hi = rot ? static_cast<float>(M_PI) : clamp.elev_hi;
    for (int i = 0; i < count; ++i) {
      const float v = lo + (hi - lo) * static_cast<float>(i) / static_cast<float>(std::max(1, count - 1));
      RenderOutput ro = lg.gen.render(nullptr, row_with(rot ? 3 : 4, v), z0, rs, nullptr);
      std::snprintf(name, sizeof(name), "%s_%03d.png", mode.c_str(), i);
      save_rgb(ro.rgb, name);
    }
  } else if (mode == "fg-only" || mode == "bg-only") {
    GeneratorModel::RenderSettings part = rs;
    part.use_fg = mode == "fg-only";
    part.use_bg = mode == "bg-only";
    Rng zr(seed + 1);
    for (int i = 0; i < count; ++i) {
      LatentBundle z = lg.gen.sample_latents(zr);
      RenderOutput ro = lg.gen.render(nullptr, base_row, z, part, nullptr);
      std::snprintf(name, sizeof(name), "%s_%03d.png", mode.c_str(), i);
      save_rgb(ro.rgb, name);
    }
  } else if (mode == "shape-interp" || mode == "appearance-interp") {
    const bool shape = mode == "shape-interp";
    for (int i = 0; i < count; ++i) {
      const float t = static_cast<float>(i) / static_cast<float>(std::max(1, count - 1));
      LatentBundle z = z0;
      if (shape) {
        z.zs_fg = LatentBundle::lerp(z0, z1, t).zs_fg;
        z.zs_bg = LatentBundle::lerp(z0, z1, t).zs_bg;
      } else {
        z.za_fg = LatentBundle::lerp(z0, z1, t).za_fg;
        z.za_bg = LatentBundle::lerp(z0, z1, t).za_bg;
      }
      RenderOutput ro = lg.gen.render(nullptr, base_row, z, rs, nullptr);
      std::snprintf(name, sizeof(name), "%s_%03d.png", mode.c_str(), i);
      save_rgb(ro.rgb, name);
    }
  } else if (mode == "depth") {
    const float r = base_row[2];
    for (int i = 0; i < count; ++i) {
      const float v = -static_cast<float>(M_PI) +
                      2.0f * static_cast<float>(M_PI) * static_cast<float>(i) /
                          static_cast<float>(std::max(1, count));
      RenderOutput ro = lg.gen.render(nullptr, row_with(3, v), z0, rs, nullptr);
      std::snprintf(name, sizeof(name), "depth_%03d.png", i);
      write_png_gray16(out_dir + "/" + name, ro.depth, r - lg.cfg.model.r_fg,
                       r + lg.cfg.model.r_fg);
      std::snprintf(name, sizeof(name), "depth_rgb_%03d.png", i);
      save_rgb(ro.rgb, name);
    }
  } else {
    std::fprintf(stderr,
                 "unknown mode '%s'; expected rotation-sweep|elevation-sweep|fg-only|bg-only|"
                 "shape-interp|appearance-interp|depth\n",
                 mode.c_str());
    return 2;
  }
  std::printf("wrote %d frame(s) to %s\n", count, out_dir.c_str());
  return 0;
}

int cmd_eval_cameras(const std::string& ckpt, const std::string& sidecar, int64_t n_samples,
                     std::string out_dir) {
  LoadedGenerator lg = load_generator(ckpt);
  if (!fs::exists(sidecar))
    throw std::runtime_error(
        "sidecar '" + sidecar +
        "' not found: camera evaluation needs the synthetic dataset's ground-truth poses.csv");
  auto gt = read_pose_records(sidecar);
  if (n_samples <= 0) n_samples = lg.cfg.eval_samples;
  Rng rng(lg.cfg.train.seed ^ 0xe7a1ull);
  CameraEvalReport r = eval_cameras(lg.gen.camgen(), lg.cfg.model.prior, gt, n_samples, rng);
  if (out_dir.empty()) out_dir = out_dir_for(lg.cfg) + "/eval";
  write_eval_report(out_dir, r);
  std::printf("rotation  W1 pred=%.4f prior=%.4f (shift %.3f)\n", r.w1_rotation,
              r.w1_rotation_prior, r.rotation_shift);
  std::printf("elevation W1 pred=%.4f prior=%.4f\n", r.w1_elevation, r.w1_elevation_prior);
  std::printf("radius    W1 pred=%.4f prior=%.4f\n", r.w1_radius, r.w1_radius_prior);
  std::printf("report written to %s\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"camera-aware decomposed generative radiance fields"};
  app.require_subcommand(1);

  std::string config_path, resume, ckpt, mode = "rotation-sweep", sidecar, out_dir, print_out;
  std::vector<std::string> sets;
  int count = 8;
  int64_t n_samples = 0;
  uint64_t seed = 1;

  auto* train = app.add_subcommand("train", "run adversarial training");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--set", sets, "override config keys (key=value)");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* render = app.add_subcommand("render", "render images from a checkpoint (EMA weights)");
  render->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  render->add_option("--mode", mode,
                     "rotation-sweep|elevation-sweep|fg-only|bg-only|shape-interp|"
                     "appearance-interp|depth");
  render->add_option("--count", count, "number of frames");
  render->add_option("--seed", seed, "latent/camera seed");
  render->add_option("--out", out_dir, "output directory");
  render->add_option("--set", sets, "override config keys (key=value)");

  auto* evalc = app.add_subcommand("eval-cameras", "camera-distribution recovery metrics");
  evalc->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  evalc->add_option("--sidecar", sidecar, "ground-truth poses.csv")->required();
  evalc->add_option("--n", n_samples, "prior samples (default: eval.n_samples)");
  evalc->add_option("--out", out_dir, "output directory");

  auto* make = app.add_subcommand("make-dataset", "generate a synthetic dataset + pose sidecar");
  make->add_option("--config", config_path, "config file")->required();
  make->add_option("--set", sets, "override config keys (key=value)");

  auto* print = app.add_subcommand("print-config", "write the reference config with all defaults");
  print->add_option("--out", print_out, "write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, sets, resume);
    if (render->parsed()) return cmd_render(ckpt, mode, count, seed, sets, out_dir);
    if (evalc->parsed()) return cmd_eval_cameras(ckpt, sidecar, n_samples, out_dir);
    if (make->parsed()) return cmd_make_dataset(config_path, sets);
    if (print->parsed()) {
      const std::string text = config_reference();
      if (print_out.empty()) {
        std::fputs(text.c_str(), stdout);
      } else {
        std::ofstream f(print_out);
        f << text;
        std::printf("reference config written to %s\n", print_out.c_str());
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
