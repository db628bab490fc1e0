#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "campari/rng.hpp"
#include "campari/tensor.hpp"

namespace campari {

struct NamedParam {
  std::string name;
  Tensor value;  // shares storage with the owning module
};
using ParamVec = std::vector<NamedParam>;

inline const Tensor* find_param(const ParamVec& params, const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return &p.value;
  return nullptr;
}

// Fan-in-scaled uniform init for ReLU layers: std = sqrt(2/fan_in).
inline Tensor he_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  return Tensor::rand_uniform(std::move(shape), rng, -bound, bound);
}

class Linear {
 public:
  Linear() = default;

  Linear(int64_t in, int64_t out, Rng& rng) : W(he_uniform({in, out}, in, rng)), b(Tensor::zeros({out})) {}

  static Linear gaussian(int64_t in, int64_t out, Rng& rng, float w_std, float b_init = 0.0f) {
    Linear l;
    l.W = Tensor::randn({in, out}, rng, 0.0f, w_std);
    l.b = Tensor::full({out}, b_init);
    return l;
  }

  // x: [N, in] -> [N, out]
  Tensor forward(Tape* tape, const Tensor& x) const {
    Tensor w = tape ? tape->watch(W) : W;
    Tensor bb = tape ? tape->watch(b) : b;
    return linear(x, w, bb);
  }

  int64_t in_dim() const { return W.dim(0); }
  int64_t out_dim() const { return W.dim(1); }

  void collect(const std::string& prefix, ParamVec& out) const {
    out.push_back({prefix + ".w", W});
    out.push_back({prefix + ".b", b});
  }

  Tensor W;
  Tensor b;
};

// Plain ReLU MLP: `depth` hidden layers of size `width`, linear output head.
class Mlp {
 public:
  Mlp() = default;

  Mlp(int64_t in, int64_t width, int depth, int64_t out, Rng& rng) {
    int64_t prev = in;
    for (int i = 0; i < depth; ++i) {
      hidden.emplace_back(prev, width, rng);
      prev = width;
    }
    head = Linear(prev, out, rng);
  }

  Tensor forward(Tape* tape, const Tensor& x) const {
    Tensor h = x;
    for (const auto& l : hidden) h = relu(l.forward(tape, h));
    return head.forward(tape, h);
  }

  void collect(const std::string& prefix, ParamVec& out) const {
    for (size_t i = 0; i < hidden.size(); ++i) hidden[i].collect(prefix + ".h" + std::to_string(i), out);
    head.collect(prefix + ".head", out);
  }

  std::vector<Linear> hidden;
  Linear head;
};

// Deep copies every parameter buffer (for EMA shadows).
inline ParamVec clone_params(const ParamVec& params) {
  ParamVec out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.value.clone()});
  return out;
}

inline void copy_params(const ParamVec& src, ParamVec& dst) {
  if (src.size() != dst.size()) throw TensorError("copy_params: size mismatch");
  for (size_t i = 0; i < src.size(); ++i) {
    if (src[i].value.numel() != dst[i].value.numel()) throw TensorError("copy_params: shape mismatch");
    std::copy(src[i].value.data(), src[i].value.data() + src[i].value.numel(), dst[i].value.data());
  }
}

}  // namespace campari
