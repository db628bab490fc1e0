#pragma once

// Adversarial training loop: sample prior camera -> camera generator ->
// volume render -> discriminate -> RMSprop updates, with progressive growing,
// R1 gradient penalty on real images, EMA generator weights, and bit-exact
// checkpoint/resume.

#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <map>
#include <unordered_map>
#include <vector>

#include "campari/checkpoint.hpp"
#include "campari/discriminator.hpp"
#include "campari/generator.hpp"
#include "campari/tensor.hpp"

namespace campari {

struct TrainConfig {
  std::vector<int> resolutions = {32, 64, 128};
  std::vector<int64_t> stage_switch_iters = {20000, 70000};  // one per growth event
  std::vector<int> batch_sizes = {64, 24, 20};               // per stage
  float lr_gen = 5e-4f;
  float lr_disc = 1e-4f;
  float lr_decay_rate = 0.1f;
  int64_t lr_decay_iters = 150000;
  float r1_lambda = 10.0f;
  float ema_decay = 0.999f;
  int points_start = 20;
  int points_max = 48;  // <= 52
  int fg_points_num = 3, fg_points_den = 4;  // fg:bg split 3:1
  int64_t camgen_warmup = 1000;
  int64_t camgen_refreeze = -1;  // iteration to re-freeze at; -1 = never
  int64_t fade_window = 10000;
  int64_t total_iters = 100000;
  float camgen_lr_mult = 1.0f;
  int chunk_rays = 4096;
  uint64_t seed = 1;

  void validate() const {
    if (resolutions.empty() || batch_sizes.size() != resolutions.size())
      throw std::invalid_argument("train config: need one batch size per stage");
    if (stage_switch_iters.size() + 1 != resolutions.size())
      throw std::invalid_argument("train config: need one stage switch per growth step");
    for (size_t i = 1; i < stage_switch_iters.size(); ++i)
      if (stage_switch_iters[i] <= stage_switch_iters[i - 1])
        throw std::invalid_argument("train config: stage switches must ascend");
    if (points_start < 1 || points_max < points_start || points_max > 52)
      throw std::invalid_argument("train config: point schedule must stay within [start, 52]");
    if (lr_gen <= 0 || lr_disc <= 0 || r1_lambda < 0 || total_iters < 1)
      throw std::invalid_argument("train config: rates and iteration counts must be positive");
  }

  int stage_at(int64_t iteration) const {
    int s = 0;
    for (size_t i = 0; i < stage_switch_iters.size(); ++i)
      if (iteration >= stage_switch_iters[i]) s = static_cast<int>(i) + 1;
    return s;
  }

  // continuous exponential decay reaching `lr_decay_rate` at lr_decay_iters
  float lr_factor(int64_t iteration) const {
    return std::exp(std::log(lr_decay_rate) * static_cast<float>(iteration) /
                    static_cast<float>(lr_decay_iters));
  }
};

// Total sample points per ray grows stepwise with the growing stage, from
// points_start at iteration 0 to points_max at the final stage. Single-stage
// schedules stay at points_start.
inline std::pair<int, int> schedule_points(int64_t iteration, const TrainConfig& cfg,
                                           bool background_enabled) {
  const int n_stages = static_cast<int>(cfg.resolutions.size());
  const int stage = cfg.stage_at(iteration);
  int total = cfg.points_start;
  if (n_stages > 1)
    total = cfg.points_start +
            static_cast<int>(std::lround(static_cast<double>(cfg.points_max - cfg.points_start) *
                                         stage / (n_stages - 1)));
  if (!background_enabled) return {total, 0};
  int n_bg = std::max(1, total * (cfg.fg_points_den - cfg.fg_points_num) / cfg.fg_points_den);
  return {total - n_bg, n_bg};
}

// Non-saturating GAN objective with R1 penalty, both players minimizing:
//   loss_G = mean softplus(-logit_fake)
//   loss_D = mean softplus(logit_fake) + mean softplus(-logit_real)
//            + lambda * mean ||grad_real||^2
inline std::pair<Tensor, Tensor> gan_losses(const Tensor& logits_fake, const Tensor& logits_real,
                                            const Tensor& grad_real_normsq, float r1_lambda) {
  Tensor loss_g = reduce_mean_all(softplus(negate(logits_fake)));
  Tensor loss_d = add(add(reduce_mean_all(softplus(logits_fake)),
                          reduce_mean_all(softplus(negate(logits_real)))),
                      scale(reduce_mean_all(grad_real_normsq), r1_lambda));
  return {loss_g, loss_d};
}

// RMSprop: v <- 0.99 v + 0.01 g^2; p <- p - lr * g / (sqrt(v) + eps).
class OptimRMSprop {
 public:
  explicit OptimRMSprop(float lr = 1e-3f) : base_lr_(lr) {}

  float base_lr() const { return base_lr_; }

  // per-parameter moment buffer, keyed by name
  std::vector<float>& moment(const std::string& name, int64_t size) {
    auto it = moments_.find(name);
    if (it == moments_.end())
      it = moments_.emplace(name, std::vector<float>(static_cast<size_t>(size), 0.0f)).first;
    return it->second;
  }

  // Applies one update. Non-finite gradients skip the tensor and count as an
  // event. lr_mult folds in schedules and per-module multipliers.
  void step(const NamedParam& param, const Tensor& grad, float lr_mult = 1.0f) {
    const int64_t n = param.value.numel();
    if (!grad.defined() || grad.numel() != n) throw TensorError("rmsprop: gradient shape mismatch");
    if (!grad.all_finite()) {
      ++nonfinite_events_;
      std::fprintf(stderr, "rmsprop: skipping non-finite gradient for %s\n", param.name.c_str());
      return;
    }
    std::vector<float>& v = moment(param.name, n);
    const float lr = base_lr_ * lr_mult;
    float* p = const_cast<float*>(param.value.data());
    const float* g = grad.data();
    for (int64_t i = 0; i < n; ++i) {
      v[static_cast<size_t>(i)] =
          smoothing_ * v[static_cast<size_t>(i)] + (1.0f - smoothing_) * g[i] * g[i];
      p[i] -= lr * g[i] / (std::sqrt(v[static_cast<size_t>(i)]) + eps_);
    }
  }

  int64_t nonfinite_events() const { return nonfinite_events_; }

  void collect(const std::string& prefix, ParamVec& out) const {
    for (const auto& [name, v] : moments_)
      out.push_back({prefix + name, Tensor({static_cast<int64_t>(v.size())}, v)});
  }
  void restore(const std::string& name, const Tensor& t) {
    moments_[name].assign(t.data(), t.data() + t.numel());
  }

 private:
  float base_lr_;
  float smoothing_ = 0.99f;
  float eps_ = 1e-8f;
  std::map<std::string, std::vector<float>> moments_;
  int64_t nonfinite_events_ = 0;
};

// ema <- decay * ema + (1 - decay) * live
inline void ema_update(ParamVec& ema, const ParamVec& live, float decay) {
  if (ema.size() != live.size()) throw TensorError("ema_update: parameter list mismatch");
  for (size_t i = 0; i < ema.size(); ++i) {
    float* e = const_cast<float*>(ema[i].value.data());
    const float* p = live[i].value.data();
    const int64_t n = ema[i].value.numel();
    for (int64_t j = 0; j < n; ++j) e[j] = decay * e[j] + (1.0f - decay) * p[j];
  }
}

// Training reads real images only through this surface; pose sidecars are
// invisible to it by construction.
class RealImageSource {
 public:
  virtual ~RealImageSource() = default;
  virtual int64_t size() const = 0;
  // [B, R, R, 3] in [0,1]
  virtual Tensor batch(const std::vector<int64_t>& indices, int resolution) const = 0;
};

class TrainAbort : public std::runtime_error {
 public:
  explicit TrainAbort(const std::string& m) : std::runtime_error(m) {}
};

struct StepStats {
  int64_t iteration = 0;
  float loss_g = 0.0f;
  float loss_d = 0.0f;
  float r1 = 0.0f;
  float fg_alpha_mean = 0.0f;
  float rot_mean = 0.0f, rot_std = 0.0f;
  float el_mean = 0.0f, el_std = 0.0f;
  float radius_mean = 0.0f;
  float focal_mean = 0.0f;
  int stage = 0;
  float fade_alpha = 1.0f;
  int n_fg = 0, n_bg = 0;
};

// Append-only CSV scalar log.
class CsvLogger {
 public:
  CsvLogger() = default;
  explicit CsvLogger(const std::string& path) : path_(path) {
    std::FILE* probe = std::fopen(path.c_str(), "rb");
    const bool fresh = probe == nullptr;
    if (probe) std::fclose(probe);
    f_ = std::fopen(path.c_str(), "ab");
    if (!f_) throw std::runtime_error("csv log: cannot open " + path);
    if (fresh)
      std::fprintf(f_,
                   "iteration,loss_g,loss_d,r1,fg_alpha_mean,rot_mean,rot_std,el_mean,el_std,"
                   "radius_mean,focal_mean,stage,fade_alpha,n_fg,n_bg\n");
  }
  ~CsvLogger() {
    if (f_) std::fclose(f_);
  }
  CsvLogger(const CsvLogger&) = delete;
  CsvLogger& operator=(const CsvLogger&) = delete;

  void log(const StepStats& s) {
    if (!f_) return;
    std::fprintf(f_, "%lld,%.7g,%.7g,%.7g,%.7g,%.7g,%.7g,%.7g,%.7g,%.7g,%.7g,%d,%.4f,%d,%d\n",
                 static_cast<long long>(s.iteration), s.loss_g, s.loss_d, s.r1, s.fg_alpha_mean,
                 s.rot_mean, s.rot_std, s.el_mean, s.el_std, s.radius_mean, s.focal_mean, s.stage,
                 s.fade_alpha, s.n_fg, s.n_bg);
    std::fflush(f_);
  }

 private:
  std::string path_;
  std::FILE* f_ = nullptr;
};

class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
          std::shared_ptr<RealImageSource> data)
      : mcfg_(model_cfg),
        tcfg_(train_cfg),
        data_(std::move(data)),
        rng_(train_cfg.seed),
        opt_g_(train_cfg.lr_gen),
        opt_d_(train_cfg.lr_disc) {
    tcfg_.validate();
    Rng init_rng(tcfg_.seed ^ 0x700000001ull);
    gen_ = GeneratorModel(mcfg_, init_rng);
    DiscConfig dc;
    dc.resolutions = tcfg_.resolutions;
    dc.channel_div = mcfg_.disc_channel_div;
    disc_ = Discriminator(dc, init_rng);
    grow_rng_ = init_rng.split();

    gen_.collect(gen_params_);
    disc_.collect("disc", disc_params_);
    ema_params_ = clone_params(gen_params_);
  }

  GeneratorModel& generator() { return gen_; }
  const GeneratorModel& generator() const { return gen_; }
  Discriminator& discriminator() { return disc_; }
  const GrowthState& growth() const { return growth_; }
  int64_t iteration() const { return iteration_; }
  const ParamVec& gen_params() const { return gen_params_; }
  const ParamVec& disc_params() const { return disc_params_; }
  const ParamVec& ema_params() const { return ema_params_; }
  void set_abort_checkpoint_path(const std::string& p) { abort_path_ = p; }

  // One full iteration: growth/schedules, D update (real+fake with R1 on the
  // real batch only), G update on fresh fakes, EMA update.
  StepStats step(bool update_d = true, bool update_g = true) {
    apply_schedules();

    StepStats stats;
    stats.iteration = iteration_;
    stats.stage = growth_.stage;
    stats.fade_alpha = growth_.fade_alpha;
    const int res = tcfg_.resolutions[static_cast<size_t>(growth_.stage)];
    const int batch = tcfg_.batch_sizes[static_cast<size_t>(growth_.stage)];
    auto [n_fg, n_bg] = schedule_points(iteration_, tcfg_, mcfg_.background);
    stats.n_fg = n_fg;
    stats.n_bg = n_bg;

    GeneratorModel::RenderSettings rs;
    rs.resolution = res;
    rs.n_fg = n_fg;
    rs.n_bg = n_bg;
    rs.chunk_rays = tcfg_.chunk_rays;

    const float lrf = tcfg_.lr_factor(iteration_);

    // ---- discriminator update ----
    if (update_d) {
      // fakes rendered without a tape: constants for the D loss
      Tensor prior_rows = sample_prior_batch(mcfg_.prior, rng_, batch);
      Tensor cam_rows = gen_.predict_cameras(nullptr, prior_rows);
      std::vector<Tensor> fakes;
      for (int b = 0; b < batch; ++b) {
        LatentBundle z = gen_.sample_latents(rng_);
        RenderOutput ro = gen_.render(nullptr, slice(cam_rows, 0, b, 1), z, rs, &rng_);
        fakes.push_back(reshape(ro.rgb, {1, res, res, 3}));
      }
      std::vector<int64_t> indices(static_cast<size_t>(batch));
      for (auto& ix : indices) ix = static_cast<int64_t>(rng_.index(static_cast<uint64_t>(data_->size())));
      Tensor real = data_->batch(indices, res);

      std::unordered_map<std::string, Tensor> grad_acc;
      double loss_d_total = 0.0, r1_total = 0.0;
      for (int b = 0; b < batch; ++b) {
        Tape tape;
        Tensor real_b = tape.watch(slice(real, 0, b, 1));
        Tensor logit_real = disc_.forward(&tape, real_b, growth_);
        Tensor gi = tape.grad_wrt(reduce_sum_all(logit_real), real_b);
        Tensor r1 = reduce_sum_all(square(gi));
        Tensor logit_fake = disc_.forward(&tape, fakes[static_cast<size_t>(b)], growth_);
        Tensor loss_b = scale(add(add(softplus(logit_fake), softplus(negate(logit_real))),
                                  scale(r1, tcfg_.r1_lambda)),
                              1.0f / static_cast<float>(batch));
        Tensor loss_scalar = reduce_sum_all(loss_b);
        if (!loss_scalar.all_finite()) abort_with_dump("discriminator loss is not finite");
        loss_d_total += loss_scalar.value();
        r1_total += r1.value() / batch;
        tape.backward(loss_scalar);
        accumulate_grads(tape, disc_params_, grad_acc);
      }
      for (const auto& p : disc_params_) {
        auto it = grad_acc.find(p.name);
        if (it != grad_acc.end()) opt_d_.step(p, it->second, lrf);
      }
      stats.loss_d = static_cast<float>(loss_d_total);
      stats.r1 = static_cast<float>(r1_total);
    }

    // ---- generator update ----
    if (update_g) {
      CameraGenerator* cg = gen_.camgen();
      const bool camgen_trainable = cg && !cg->frozen();

      std::unordered_map<std::string, Tensor> grad_acc;
      double loss_g_total = 0.0, alpha_total = 0.0;
      std::vector<double> rots, els, radii, focals;
      for (int b = 0; b < batch; ++b) {
        Tape tape;
        Tensor prior_row = sample_prior_batch(mcfg_.prior, rng_, 1);
        Tensor cam_row = gen_.predict_cameras(&tape, prior_row);
        {
          const float* row = cam_row.data();
          focals.push_back(row[0]);
          radii.push_back(row[2]);
          rots.push_back(row[3]);
          els.push_back(row[4]);
        }
        LatentBundle z = gen_.sample_latents(rng_);
        RenderOutput ro = gen_.render(&tape, cam_row, z, rs, &rng_);
        Tensor logit = disc_.forward(&tape, reshape(ro.rgb, {1, res, res, 3}), growth_);
        Tensor loss_b = scale(reduce_sum_all(softplus(negate(logit))), 1.0f / static_cast<float>(batch));
        if (!loss_b.all_finite()) abort_with_dump("generator loss is not finite");
        loss_g_total += loss_b.value();
        for (int64_t i = 0; i < ro.fg_alpha.numel(); ++i) alpha_total += ro.fg_alpha[i];
        tape.backward(loss_b);
        accumulate_grads(tape, gen_params_, grad_acc);
      }
      for (const auto& p : gen_params_) {
        const bool is_cg = gen_.is_camgen_param(p.name);
        if (is_cg && !camgen_trainable) continue;  // frozen: no update
        auto it = grad_acc.find(p.name);
        if (it != grad_acc.end())
          opt_g_.step(p, it->second, lrf * (is_cg ? tcfg_.camgen_lr_mult : 1.0f));
      }
      ema_update(ema_params_, gen_params_, tcfg_.ema_decay);

      stats.loss_g = static_cast<float>(loss_g_total);
      stats.fg_alpha_mean =
          static_cast<float>(alpha_total / (static_cast<double>(batch) * res * res));
      auto mean_std = [](const std::vector<double>& v, float* m, float* s) {
        double mu = 0;
        for (double x : v) mu += x;
        mu /= static_cast<double>(v.size());
        double var = 0;
        for (double x : v) var += (x - mu) * (x - mu);
        *m = static_cast<float>(mu);
        if (s) *s = static_cast<float>(std::sqrt(var / static_cast<double>(v.size())));
      };
      mean_std(rots, &stats.rot_mean, &stats.rot_std);
      mean_std(els, &stats.el_mean, &stats.el_std);
      mean_std(radii, &stats.radius_mean, nullptr);
      mean_std(focals, &stats.focal_mean, nullptr);
    }

    ++iteration_;
    return stats;
  }

  // ---- checkpointing ----

  ParamVec snapshot() const {
    ParamVec all;
    for (const auto& p : gen_params_) all.push_back({p.name, p.value.clone()});
    for (const auto& p : disc_params_) all.push_back({p.name, p.value.clone()});
    for (const auto& p : ema_params_) all.push_back({"ema." + p.name, p.value.clone()});
    opt_g_.collect("opt_g.", all);
    opt_d_.collect("opt_d.", all);
    Tensor meta({4}, {static_cast<float>(iteration_), static_cast<float>(growth_.stage),
                      growth_.fade_alpha, static_cast<float>(last_grow_iter_)});
    all.push_back({"_meta", meta});
    all.push_back({"_rng", encode_rng_state(rng_)});
    all.push_back({"_rng_grow", encode_rng_state(grow_rng_)});
    return all;
  }

  void save(const std::string& path) const { save_checkpoint(path, snapshot()); }

  void load(const std::string& path) {
    ParamVec all = load_checkpoint(path);
    const Tensor* meta = find_param(all, "_meta");
    if (!meta || meta->numel() != 4) throw CheckpointError("checkpoint: missing _meta");
    iteration_ = static_cast<int64_t>((*meta)[0]);
    const int stage = static_cast<int>((*meta)[1]);
    growth_.fade_alpha = (*meta)[2];
    last_grow_iter_ = static_cast<int64_t>((*meta)[3]);
    while (growth_.stage < stage) disc_.grow(growth_, grow_rng_);
    growth_.fade_alpha = (*meta)[2];

    // discriminator may have grown: refresh the parameter list, then restore
    disc_params_.clear();
    disc_.collect("disc", disc_params_);
    auto restore_into = [&](ParamVec& dst, const std::string& prefix) {
      for (auto& p : dst) {
        const Tensor* src = find_param(all, prefix + p.name);
        if (!src) throw CheckpointError("checkpoint: missing tensor " + prefix + p.name);
        if (src->numel() != p.value.numel())
          throw CheckpointError("checkpoint: shape mismatch for " + prefix + p.name);
        std::copy(src->data(), src->data() + src->numel(), const_cast<float*>(p.value.data()));
      }
    };
    restore_into(gen_params_, "");
    restore_into(disc_params_, "");
    restore_into(ema_params_, "ema.");
    for (const auto& e : all) {
      if (e.name.rfind("opt_g.", 0) == 0) opt_g_.restore(e.name.substr(6), e.value);
      if (e.name.rfind("opt_d.", 0) == 0) opt_d_.restore(e.name.substr(6), e.value);
    }
    const Tensor* rng_state = find_param(all, "_rng");
    if (!rng_state) throw CheckpointError("checkpoint: missing _rng");
    decode_rng_state(*rng_state, rng_);
    if (const Tensor* grow_state = find_param(all, "_rng_grow")) decode_rng_state(*grow_state, grow_rng_);
  }

 private:
  void apply_schedules() {
    // growth events exactly at the configured iterations
    for (size_t k = 0; k < tcfg_.stage_switch_iters.size(); ++k) {
      if (iteration_ == tcfg_.stage_switch_iters[k] && growth_.stage == static_cast<int>(k)) {
        disc_.grow(growth_, grow_rng_);
        last_grow_iter_ = iteration_;
      }
    }
    if (last_grow_iter_ >= 0) {
      growth_.fade_alpha = std::min(
          1.0f, static_cast<float>(iteration_ - last_grow_iter_) / static_cast<float>(tcfg_.fade_window));
    }

    if (CameraGenerator* cg = gen_.camgen()) {
      const bool frozen = iteration_ < tcfg_.camgen_warmup ||
                          (tcfg_.camgen_refreeze >= 0 && iteration_ >= tcfg_.camgen_refreeze);
      if (frozen)
        cg->freeze();
      else
        cg->unfreeze();
    }
  }

  void accumulate_grads(Tape& tape, const ParamVec& params,
                        std::unordered_map<std::string, Tensor>& acc) {
    for (const auto& p : params) {
      Tensor g = tape.grad(p.value);
      auto it = acc.find(p.name);
      if (it == acc.end()) {
        acc.emplace(p.name, g.clone());
      } else {
        float* dst = const_cast<float*>(it->second.data());
        const float* src = g.data();
        for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
      }
    }
  }

  void abort_with_dump(const std::string& why) {
    if (!abort_path_.empty()) {
      try {
        save(abort_path_);
        std::fprintf(stderr, "train: %s; checkpoint dumped to %s\n", why.c_str(),
                     abort_path_.c_str());
      } catch (const std::exception& e) {
        std::fprintf(stderr, "train: %s; checkpoint dump failed: %s\n", why.c_str(), e.what());
      }
    }
    throw TrainAbort(why + " at iteration " + std::to_string(iteration_));
  }

  ModelConfig mcfg_;
  TrainConfig tcfg_;
  std::shared_ptr<RealImageSource> data_;
  Rng rng_;
  Rng grow_rng_{0};
  GeneratorModel gen_;
  Discriminator disc_;
  GrowthState growth_;
  OptimRMSprop opt_g_, opt_d_;
  ParamVec gen_params_, disc_params_, ema_params_;
  int64_t iteration_ = 0;
  int64_t last_grow_iter_ = -1;
  std::string abort_path_;
};

}  // namespace campari
