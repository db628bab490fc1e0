#pragma once

// Flat `key = value` text configuration (# comments, UTF-8). Every key is
// declared in one schema table that drives parsing, validation, override
// handling, and the generated reference file. Unknown keys are rejected with
// line numbers.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "campari/datasets.hpp"
#include "campari/gan_training.hpp"
#include "campari/generator.hpp"

namespace campari {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& msg, int line = -1)
      : std::runtime_error(line >= 0 ? "config line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = -1;
};

struct RunConfig {
  std::string run_name = "run";
  std::string out_root = "out";
  ModelConfig model;
  TrainConfig train;

  // dataset
  std::string dataset_path;
  bool dataset_synthetic = false;
  SyntheticSpec synth;

  int64_t eval_samples = 100000;
  int64_t log_every = 10;
  int64_t checkpoint_every = 1000;
};

namespace detail_cfg {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("expected on/off, got '" + v + "'");
}

inline double parse_num(const std::string& v) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<T>(parse_num(trim(item))));
  if (out.empty()) throw ConfigError("expected a comma-separated list, got '" + v + "'");
  return out;
}

// gaussian(mu,sigma) | uniform(lo,hi) | fixed(v)
inline DistSpec parse_dist(const std::string& v) {
  auto open = v.find('(');
  auto close = v.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw ConfigError("expected gaussian(..)/uniform(..)/fixed(..), got '" + v + "'");
  const std::string kind = trim(v.substr(0, open));
  std::vector<double> args = parse_list<double>(v.substr(open + 1, close - open - 1));
  if (kind == "fixed" && args.size() == 1) return DistSpec::fixed(args[0]);
  if (kind == "gaussian" && args.size() == 2) return DistSpec::gaussian(args[0], args[1]);
  if (kind == "uniform" && args.size() == 2) return DistSpec::uniform(args[0], args[1]);
  throw ConfigError("bad distribution '" + v + "'");
}

// mix(w*gaussian(mu,sigma), ...) or a bare gaussian(mu,sigma)
inline GaussianMixture parse_mixture(const std::string& v) {
  GaussianMixture m;
  std::string body = v;
  if (v.rfind("mix(", 0) == 0 && v.back() == ')') body = v.substr(4, v.size() - 5);
  // split on commas at parenthesis depth zero
  std::vector<std::string> parts;
  int depth = 0;
  std::string cur;
  for (char c : body) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty()) parts.push_back(trim(cur));
  for (const auto& p : parts) {
    double w = 1.0;
    std::string g = p;
    auto star = p.find('*');
    if (star != std::string::npos) {
      w = parse_num(trim(p.substr(0, star)));
      g = trim(p.substr(star + 1));
    }
    DistSpec d = parse_dist(g);
    if (d.kind != DistSpec::Kind::Gaussian) throw ConfigError("mixture components must be gaussian");
    m.components.push_back({w, d.a, d.b});
  }
  if (parts.size() == 1) m.components[0].weight = 1.0;
  m.validate();
  return m;
}

inline std::string dist_str(const DistSpec& d) {
  std::ostringstream os;
  switch (d.kind) {
    case DistSpec::Kind::Gaussian: os << "gaussian(" << d.a << "," << d.b << ")"; break;
    case DistSpec::Kind::Uniform: os << "uniform(" << d.a << "," << d.b << ")"; break;
    case DistSpec::Kind::Fixed: os << "fixed(" << d.a << ")"; break;
  }
  return os.str();
}

inline std::string mixture_str(const GaussianMixture& m) {
  std::ostringstream os;
  os << "mix(";
  for (size_t i = 0; i < m.components.size(); ++i) {
    if (i) os << ",";
    os << m.components[i].weight << "*gaussian(" << m.components[i].mu << ","
       << m.components[i].sigma << ")";
  }
  os << ")";
  return os.str();
}

template <typename T>
std::string list_str(const std::vector<T>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

struct SchemaEntry {
  std::string key;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<SchemaEntry>& schema() {
  static const std::vector<SchemaEntry> table = [] {
    std::vector<SchemaEntry> t;
    auto add = [&](std::string key, std::string doc, auto setter, auto getter) {
      t.push_back({std::move(key), std::move(doc),
                   [setter](RunConfig& c, const std::string& v) { setter(c, v); },
                   [getter](const RunConfig& c) { return getter(c); }});
    };

    add("run.name", "output subdirectory name",
        [](RunConfig& c, const std::string& v) { c.run_name = v; },
        [](const RunConfig& c) { return c.run_name; });
    add("run.out_root", "output root (CAMPARI_OUT overrides)",
        [](RunConfig& c, const std::string& v) { c.out_root = v; },
        [](const RunConfig& c) { return c.out_root; });

    // model
    add("model.r_fg", "foreground sphere radius (< 1)",
        [](RunConfig& c, const std::string& v) { c.model.r_fg = static_cast<float>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.model.r_fg); });
    add("model.latent_dim", "shape/appearance code dimension",
        [](RunConfig& c, const std::string& v) { c.model.latent_dim = static_cast<int64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.model.latent_dim); });
    add("model.background", "separate background field on/off",
        [](RunConfig& c, const std::string& v) { c.model.background = parse_bool(v); },
        [](const RunConfig& c) { return c.model.background ? "on" : "off"; });
    add("model.camera_generator", "learned residual camera generator on/off",
        [](RunConfig& c, const std::string& v) { c.model.camera_generator = parse_bool(v); },
        [](const RunConfig& c) { return c.model.camera_generator ? "on" : "off"; });
    add("model.fg_width", "radiance net hidden width",
        [](RunConfig& c, const std::string& v) { c.model.fg_width = static_cast<int64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.model.fg_width); });
    add("model.fg_depth", "radiance net hidden depth",
        [](RunConfig& c, const std::string& v) { c.model.fg_depth = static_cast<int>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.model.fg_depth); });
    add("model.n_freq_x", "positional encoding frequencies for points",
        [](RunConfig& c, const std::string& v) { c.model.n_freq_x = static_cast<int>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.model.n_freq_x); });
    add("model.n_freq_d", "positional encoding frequencies for directions",
        [](RunConfig& c, const std::string& v) { c.model.n_freq_d = static_cast<int>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.model.n_freq_d); });
    add("model.camgen_width", "camera generator hidden width",
        [](RunConfig& c, const std::string& v) { c.model.camgen_width = static_cast<int64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.model.camgen_width); });
    add("model.camgen_depth", "camera generator hidden depth",
        [](RunConfig& c, const std::string& v) { c.model.camgen_depth = static_cast<int>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.model.camgen_depth); });
    add("model.disc_channel_div", "discriminator channel-ladder divisor (desk scaling)",
        [](RunConfig& c, const std::string& v) {
          c.model.disc_channel_div = static_cast<int>(parse_num(v));
        },
        [](const RunConfig& c) { return std::to_string(c.model.disc_channel_div); });
    add("model.bg_far_cap", "integration width cap for the outermost background interval",
        [](RunConfig& c, const std::string& v) { c.model.bg_far_cap = static_cast<float>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.model.bg_far_cap); });

    // camera prior (angles in radians; focal is resolution-relative)
    add("camera.focal", "prior over fx: gaussian(mu,sigma)|uniform(lo,hi)|fixed(v)",
        [](RunConfig& c, const std::string& v) { c.model.prior.focal_x = parse_dist(v); },
        [](const RunConfig& c) { return dist_str(c.model.prior.focal_x); });
    add("camera.focal_y", "prior over fy (used when tie_focal = off)",
        [](RunConfig& c, const std::string& v) { c.model.prior.focal_y = parse_dist(v); },
        [](const RunConfig& c) { return dist_str(c.model.prior.focal_y); });
    add("camera.tie_focal", "duplicate fx into fy",
        [](RunConfig& c, const std::string& v) { c.model.prior.tie_focal = parse_bool(v); },
        [](const RunConfig& c) { return c.model.prior.tie_focal ? "on" : "off"; });
    add("camera.radius", "prior over r_cam",
        [](RunConfig& c, const std::string& v) { c.model.prior.radius = parse_dist(v); },
        [](const RunConfig& c) { return dist_str(c.model.prior.radius); });
    add("camera.rotation", "prior over alpha_r (radians)",
        [](RunConfig& c, const std::string& v) { c.model.prior.rotation = parse_dist(v); },
        [](const RunConfig& c) { return dist_str(c.model.prior.rotation); });
    add("camera.elevation", "prior over alpha_e (radians)",
        [](RunConfig& c, const std::string& v) { c.model.prior.elevation = parse_dist(v); },
        [](const RunConfig& c) { return dist_str(c.model.prior.elevation); });
    add("camera.rot360", "carry rotation on SO(2) for full-turn scenes",
        [](RunConfig& c, const std::string& v) { c.model.prior.rot360 = parse_bool(v); },
        [](const RunConfig& c) { return c.model.prior.rot360 ? "on" : "off"; });

    // camera generator schedule
    add("camgen.warmup_iters", "iterations the camera generator stays frozen",
        [](RunConfig& c, const std::string& v) { c.train.camgen_warmup = static_cast<int64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.camgen_warmup); });
    add("camgen.refreeze_iter", "iteration to re-freeze at (-1 = never)",
        [](RunConfig& c, const std::string& v) {
          c.train.camgen_refreeze = static_cast<int64_t>(parse_num(v));
        },
        [](const RunConfig& c) { return std::to_string(c.train.camgen_refreeze); });
    add("camgen.lr_mult", "learning-rate multiplier for camera generator parameters",
        [](RunConfig& c, const std::string& v) { c.train.camgen_lr_mult = static_cast<float>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.camgen_lr_mult); });

    // training
    add("train.resolutions", "growing ladder, ascending",
        [](RunConfig& c, const std::string& v) { c.train.resolutions = parse_list<int>(v); },
        [](const RunConfig& c) { return list_str(c.train.resolutions); });
    add("train.stage_switch_iters", "iterations at which resolution doubles",
        [](RunConfig& c, const std::string& v) {
          c.train.stage_switch_iters = v == "none" ? std::vector<int64_t>{} : parse_list<int64_t>(v);
        },
        [](const RunConfig& c) {
          return c.train.stage_switch_iters.empty() ? "none" : list_str(c.train.stage_switch_iters);
        });
    add("train.batch_sizes", "batch size per stage",
        [](RunConfig& c, const std::string& v) { c.train.batch_sizes = parse_list<int>(v); },
        [](const RunConfig& c) { return list_str(c.train.batch_sizes); });
    add("train.lr_gen", "generator learning rate",
        [](RunConfig& c, const std::string& v) { c.train.lr_gen = static_cast<float>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.lr_gen); });
    add("train.lr_disc", "discriminator learning rate",
        [](RunConfig& c, const std::string& v) { c.train.lr_disc = static_cast<float>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.lr_disc); });
    add("train.lr_decay_rate", "decay factor reached at lr_decay_iters",
        [](RunConfig& c, const std::string& v) { c.train.lr_decay_rate = static_cast<float>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.lr_decay_rate); });
    add("train.lr_decay_iters", "iterations over which the decay completes",
        [](RunConfig& c, const std::string& v) {
          c.train.lr_decay_iters = static_cast<int64_t>(parse_num(v));
        },
        [](const RunConfig& c) { return std::to_string(c.train.lr_decay_iters); });
    add("train.r1_lambda", "R1 gradient penalty weight",
        [](RunConfig& c, const std::string& v) { c.train.r1_lambda = static_cast<float>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.r1_lambda); });
    add("train.ema_decay", "generator EMA decay",
        [](RunConfig& c, const std::string& v) { c.train.ema_decay = static_cast<float>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.ema_decay); });
    add("train.points_start", "ray sample points at iteration 0",
        [](RunConfig& c, const std::string& v) { c.train.points_start = static_cast<int>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.points_start); });
    add("train.points_max", "ray sample points at the final stage (max 52)",
        [](RunConfig& c, const std::string& v) { c.train.points_max = static_cast<int>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.points_max); });
    add("train.fade_window", "iterations over which freshly grown blocks fade in",
        [](RunConfig& c, const std::string& v) { c.train.fade_window = static_cast<int64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.fade_window); });
    add("train.total_iters", "total training iterations",
        [](RunConfig& c, const std::string& v) { c.train.total_iters = static_cast<int64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.total_iters); });
    add("train.chunk_rays", "rays per rendering chunk",
        [](RunConfig& c, const std::string& v) { c.train.chunk_rays = static_cast<int>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.chunk_rays); });
    add("train.seed", "root RNG seed",
        [](RunConfig& c, const std::string& v) { c.train.seed = static_cast<uint64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.train.seed); });
    add("train.log_every", "CSV log cadence in iterations",
        [](RunConfig& c, const std::string& v) { c.log_every = static_cast<int64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.log_every); });
    add("train.checkpoint_every", "checkpoint cadence in iterations",
        [](RunConfig& c, const std::string& v) { c.checkpoint_every = static_cast<int64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.checkpoint_every); });

    // dataset
    add("dataset.path", "directory of training PNGs (and make-dataset output)",
        [](RunConfig& c, const std::string& v) { c.dataset_path = v; },
        [](const RunConfig& c) { return c.dataset_path; });
    add("dataset.kind", "images | synthetic",
        [](RunConfig& c, const std::string& v) {
          if (v == "images")
            c.dataset_synthetic = false;
          else if (v == "synthetic")
            c.dataset_synthetic = true;
          else
            throw ConfigError("dataset.kind must be images or synthetic");
        },
        [](const RunConfig& c) { return c.dataset_synthetic ? "synthetic" : "images"; });
    add("dataset.scene", "textured_sphere | boxes_on_plane | chair_proxy",
        [](RunConfig& c, const std::string& v) {
          if (v == "textured_sphere")
            c.synth.kind = SceneKind::TexturedSphere;
          else if (v == "boxes_on_plane")
            c.synth.kind = SceneKind::BoxesOnPlane;
          else if (v == "chair_proxy")
            c.synth.kind = SceneKind::ChairProxy;
          else
            throw ConfigError("unknown dataset.scene '" + v + "'");
        },
        [](const RunConfig& c) {
          switch (c.synth.kind) {
            case SceneKind::TexturedSphere: return std::string("textured_sphere");
            case SceneKind::BoxesOnPlane: return std::string("boxes_on_plane");
            default: return std::string("chair_proxy");
          }
        });
    add("dataset.rotation", "ground-truth rotation mixture, mix(w*gaussian(mu,sigma),...)",
        [](RunConfig& c, const std::string& v) { c.synth.rotation = parse_mixture(v); },
        [](const RunConfig& c) { return mixture_str(c.synth.rotation); });
    add("dataset.elevation", "ground-truth elevation mixture",
        [](RunConfig& c, const std::string& v) { c.synth.elevation = parse_mixture(v); },
        [](const RunConfig& c) { return mixture_str(c.synth.elevation); });
    add("dataset.radius", "fixed ground-truth camera radius",
        [](RunConfig& c, const std::string& v) { c.synth.radius = parse_num(v); },
        [](const RunConfig& c) { return std::to_string(c.synth.radius); });
    add("dataset.focal", "fixed ground-truth relative focal",
        [](RunConfig& c, const std::string& v) { c.synth.focal = parse_num(v); },
        [](const RunConfig& c) { return std::to_string(c.synth.focal); });
    add("dataset.n_images", "images to generate",
        [](RunConfig& c, const std::string& v) { c.synth.n_images = static_cast<int>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.synth.n_images); });
    add("dataset.resolution", "stored image resolution",
        [](RunConfig& c, const std::string& v) { c.synth.resolution = static_cast<int>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.synth.resolution); });
    add("dataset.seed", "dataset generation seed",
        [](RunConfig& c, const std::string& v) { c.synth.seed = static_cast<uint64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.synth.seed); });

    // eval
    add("eval.n_samples", "prior samples pushed through the camera generator",
        [](RunConfig& c, const std::string& v) { c.eval_samples = static_cast<int64_t>(parse_num(v)); },
        [](const RunConfig& c) { return std::to_string(c.eval_samples); });

    return t;
  }();
  return table;
}

}  // namespace detail_cfg

inline void config_set(RunConfig& cfg, const std::string& key, const std::string& value,
                       int line = -1) {
  for (const auto& e : detail_cfg::schema()) {
    if (e.key == key) {
      try {
        e.set(cfg, value);
      } catch (const ConfigError& err) {
        throw ConfigError(std::string(err.what()), line);
      }
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'", line);
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    std::string line = raw;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail_cfg::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
    const std::string key = detail_cfg::trim(line.substr(0, eq));
    const std::string value = detail_cfg::trim(line.substr(eq + 1));
    config_set(cfg, key, value, line_no);
  }
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

// All keys with current values and docs; with a default-constructed RunConfig
// this is the generated reference file.
inline std::string config_reference(const RunConfig& cfg = RunConfig()) {
  std::ostringstream os;
  os << "# campari configuration reference\n";
  os << "# every key with its value; '#' starts a comment\n\n";
  std::string section;
  for (const auto& e : detail_cfg::schema()) {
    const std::string sec = e.key.substr(0, e.key.find('.'));
    if (sec != section) {
      os << "\n# --- " << sec << " ---\n";
      section = sec;
    }
    os << e.key << " = " << e.get(cfg) << "  # " << e.doc << "\n";
  }
  return os.str();
}

// Pre-flight validation for training; names the offending key.
inline void validate_for_training(const RunConfig& cfg) {
  if (cfg.dataset_path.empty()) throw ConfigError("missing required key 'dataset.path'");
  cfg.train.validate();
  if (!(cfg.model.r_fg > 0.0f && cfg.model.r_fg < 1.0f))
    throw ConfigError("model.r_fg must lie in (0, 1)");
}

// Config text <-> f32 tensor (byte values), embedded in checkpoints so they
// are self-describing.
inline Tensor config_to_tensor(const std::string& text) {
  Tensor t = Tensor::zeros({static_cast<int64_t>(text.size())});
  for (size_t i = 0; i < text.size(); ++i)
    t.data()[i] = static_cast<float>(static_cast<unsigned char>(text[i]));
  return t;
}

inline std::string config_from_tensor(const Tensor& t) {
  std::string s;
  s.reserve(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i)
    s.push_back(static_cast<char>(static_cast<unsigned char>(t[i])));
  return s;
}

}  // namespace campari
