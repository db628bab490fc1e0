#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "campari/tensor.hpp"
#include "testing/finite_difference.hpp"

using namespace campari;
using campari::testing::fd_compare;
using campari::testing::fd_gradient;

namespace {

Tensor vec(std::vector<float> v) {
  const auto n = static_cast<int64_t>(v.size());
  return Tensor({n}, std::move(v));
}

Tensor mat(int64_t m, int64_t n, std::vector<float> v) { return Tensor({m, n}, std::move(v)); }

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise forward values
// ---------------------------------------------------------------------------

TEST(Elementwise, BasicValues) {
  Tensor r = add(vec({1, 2}), vec({3, 4}));
  EXPECT_FLOAT_EQ(r[0], 4.0f);
  EXPECT_FLOAT_EQ(r[1], 6.0f);

  Tensor rr = relu(vec({-1, 0, 2}));
  EXPECT_FLOAT_EQ(rr[0], 0.0f);
  EXPECT_FLOAT_EQ(rr[1], 0.0f);
  EXPECT_FLOAT_EQ(rr[2], 2.0f);

  EXPECT_NEAR(softplus(Tensor::scalar(0.0f)).value(), std::log(2.0), 1e-6);

  Tensor lr = leaky_relu(vec({-1.0f, 3.0f}));
  EXPECT_FLOAT_EQ(lr[0], -0.2f);
  EXPECT_FLOAT_EQ(lr[1], 3.0f);

  Tensor cl = clamp(vec({-2.0f, 0.25f, 9.0f}), -0.5f, 0.5f);
  EXPECT_FLOAT_EQ(cl[0], -0.5f);
  EXPECT_FLOAT_EQ(cl[1], 0.25f);
  EXPECT_FLOAT_EQ(cl[2], 0.5f);
}

TEST(Elementwise, SuffixBroadcast) {
  // [2,3] + [3] broadcasts along the leading dim
  Tensor a = mat(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor b = vec({10, 20, 30});
  Tensor r = add(a, b);
  EXPECT_FLOAT_EQ(r[0], 11.0f);
  EXPECT_FLOAT_EQ(r[5], 36.0f);

  EXPECT_THROW(add(mat(2, 3, {1, 2, 3, 4, 5, 6}), vec({1, 2})), TensorError);
}

TEST(Elementwise, DivRecordsDerivativeAtSmallDenominator) {
  Tape tape;
  Tensor b = tape.watch(vec({1e-6f}));
  Tensor out = div(Tensor::scalar(1.0f), b);
  tape.backward(out);
  // d(1/b)/db = -1/b^2: huge but finite and recorded
  float g = tape.grad(b)[0];
  EXPECT_TRUE(std::isfinite(g));
  EXPECT_LT(g, -1e11f);
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

TEST(Matmul, IdentityAndSmallProduct) {
  Tensor I2 = mat(2, 2, {1, 0, 0, 1});
  Tensor A = mat(2, 2, {1, 2, 3, 4});
  Tensor r = matmul(I2, A);
  for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(r[i], A[i]);

  Tensor row = mat(1, 2, {1, 2});
  Tensor col = mat(2, 1, {3, 4});
  EXPECT_FLOAT_EQ(matmul(row, col).value(), 11.0f);

  EXPECT_THROW(matmul(mat(2, 3, {1, 2, 3, 4, 5, 6}), mat(2, 2, {1, 2, 3, 4})), TensorError);
}

TEST(Matmul, GradOfSumMatchesFiniteDifferences) {
  Rng rng(77);
  Tensor A = Tensor::rand_uniform({3, 4}, rng, 0.2f, 1.2f);
  Tensor B = Tensor::rand_uniform({4, 2}, rng, 0.2f, 1.2f);

  Tape tape;
  Tensor At = tape.watch(A);
  Tensor loss = reduce_sum_all(matmul(At, B));
  tape.backward(loss);
  Tensor g = tape.grad(At);

  auto fd = fd_gradient([&] { return static_cast<double>(reduce_sum_all(matmul(A, B)).value()); },
                        A.data(), A.numel(), 1e-3);
  auto cmp = fd_compare(g.data(), fd, 1e-3, 5e-5);
  EXPECT_TRUE(cmp.ok) << "max rel err " << cmp.max_rel;

  // dL/dA for L = sum(A*B) has every row equal to the row-sums of B
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      float row_sum = B[j * 2] + B[j * 2 + 1];
      EXPECT_NEAR(g[i * 4 + j], row_sum, 1e-5);
    }
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

TEST(Reduce, Values) {
  EXPECT_FLOAT_EQ(reduce_sum_all(vec({1, 2, 3})).value(), 6.0f);

  Tensor m = mat(2, 2, {1, 3, 5, 7});
  Tensor mean0 = reduce_mean(m, 0);
  EXPECT_FLOAT_EQ(mean0[0], 3.0f);
  EXPECT_FLOAT_EQ(mean0[1], 5.0f);

  // max ties break toward the lowest index
  Tape tape;
  Tensor x = tape.watch(vec({2, 2, 1}));
  Tensor mx = reduce_max_all(x);
  EXPECT_FLOAT_EQ(mx.value(), 2.0f);
  tape.backward(mx);
  Tensor g = tape.grad(x);
  EXPECT_FLOAT_EQ(g[0], 1.0f);
  EXPECT_FLOAT_EQ(g[1], 0.0f);
  EXPECT_FLOAT_EQ(g[2], 0.0f);

  EXPECT_THROW(reduce_sum(Tensor::zeros({2, 0}), 1), TensorError);
}

// ---------------------------------------------------------------------------
// Backward basics
// ---------------------------------------------------------------------------

TEST(Backward, SquareGradient) {
  Tape tape;
  Tensor x = tape.watch(Tensor::scalar(3.0f));
  Tensor loss = mul(x, x);
  tape.backward(loss);
  EXPECT_FLOAT_EQ(tape.grad(x).value(), 6.0f);
  EXPECT_FLOAT_EQ(tape.grad(loss).value(), 1.0f);  // dL/dL = 1
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Tensor x = tape.watch(vec({1, 2}));
  Tensor y = mul(x, x);
  EXPECT_THROW(tape.backward(y), TensorError);
}

TEST(Backward, DagAccumulatesOncePerNode) {
  // z = y*y with y = x + x  =>  z = 4x^2, dz/dx = 8x
  Tape tape;
  Tensor x = tape.watch(Tensor::scalar(1.5f));
  Tensor y = add(x, x);
  Tensor z = mul(y, y);
  tape.backward(z);
  EXPECT_FLOAT_EQ(tape.grad(x).value(), 12.0f);
}

TEST(Backward, ReluNetworkMatchesFiniteDifferences) {
  Rng rng(3);
  Tensor W = Tensor::rand_uniform({6, 10}, rng, -1.0f, 1.0f);
  Tensor x = Tensor::rand_uniform({10, 1}, rng, 0.25f, 1.25f);

  auto forward = [&] {
    return static_cast<double>(reduce_sum_all(relu(matmul(W, x))).value());
  };

  Tape tape;
  Tensor Wt = tape.watch(W);
  Tensor loss = reduce_sum_all(relu(matmul(Wt, x)));
  tape.backward(loss);
  Tensor g = tape.grad(Wt);

  auto fd = fd_gradient(forward, W.data(), W.numel(), 1e-2);
  auto cmp = fd_compare(g.data(), fd, 1e-3, 5e-5);
  EXPECT_TRUE(cmp.ok) << "max rel err " << cmp.max_rel << " at " << cmp.worst_index;
}

TEST(Backward, UnrelatedInputGetsZeroGradient) {
  Tape tape;
  Tensor x = tape.watch(Tensor::scalar(2.0f));
  Tensor y = tape.watch(Tensor::scalar(5.0f));
  Tensor loss = mul(x, x);
  Tensor g = tape.grad_wrt(loss, y);
  EXPECT_FLOAT_EQ(g.value(), 0.0f);
}

// ---------------------------------------------------------------------------
// Double backward / gradient-of-gradient
// ---------------------------------------------------------------------------

TEST(DoubleBackward, LinearDGradientIsAllOnes) {
  Tape tape;
  Tensor img = tape.watch(Tensor::rand_uniform({4, 4, 3}, *std::make_unique<Rng>(1)));
  Tensor d = reduce_sum_all(img);
  Tensor gi = tape.grad_wrt(d, img);
  for (int64_t i = 0; i < gi.numel(); ++i) EXPECT_FLOAT_EQ(gi[i], 1.0f);
  Tensor normsq = reduce_sum_all(square(gi));
  EXPECT_FLOAT_EQ(normsq.value(), 48.0f);
}

TEST(DoubleBackward, QuadraticDGradient) {
  Tape tape;
  Tensor img = tape.watch(Tensor::ones({2, 2}));
  Tensor d = reduce_sum_all(square(img));
  Tensor gi = tape.grad_wrt(d, img);
  for (int64_t i = 0; i < gi.numel(); ++i) EXPECT_FLOAT_EQ(gi[i], 2.0f);
}

TEST(DoubleBackward, PenaltyGradientThroughScaleParameter) {
  // D(I) = phi * sum(I): penalty P = ||grad_I D||^2 = phi^2 * HWC,
  // so dP/dphi = 2 * phi * HWC.
  const float phi0 = 0.7f;
  const int64_t hwc = 4 * 4 * 3;
  Rng rng(9);
  Tensor img_data = Tensor::rand_uniform({4, 4, 3}, rng);
  Tensor phi_data = Tensor::scalar(phi0);

  Tape tape;
  Tensor phi = tape.watch(phi_data);
  Tensor img = tape.watch(img_data);
  Tensor d = mul(phi, reduce_sum_all(img));
  Tensor gi = tape.grad_wrt(d, img);
  Tensor penalty = reduce_sum_all(square(gi));
  EXPECT_NEAR(penalty.value(), phi0 * phi0 * hwc, 1e-4);
  tape.backward(penalty);
  float got = tape.grad(phi).value();
  EXPECT_NEAR(got, 2.0f * phi0 * hwc, 1e-3);

  // and against the finite-difference oracle
  auto fd = fd_gradient(
      [&] {
        Tape t2;
        Tensor p = t2.watch(phi_data);
        Tensor im = t2.watch(img_data);
        Tensor dd = mul(p, reduce_sum_all(im));
        Tensor gg = t2.grad_wrt(dd, im);
        return static_cast<double>(reduce_sum_all(square(gg)).value());
      },
      phi_data.data(), 1, 1e-3);
  EXPECT_NEAR(fd[0], 2.0 * phi0 * hwc, 0.2);
}

TEST(DoubleBackward, BiasOnlyLinearDHasZeroSecondOrderGradient) {
  // D(I) = sum(I) + b: grad_I D is constant, so d||grad||^2/db = 0.
  Tape tape;
  Tensor b = tape.watch(Tensor::scalar(0.3f));
  Tensor img = tape.watch(Tensor::ones({2, 3}));
  Tensor d = add(reduce_sum_all(img), b);
  Tensor gi = tape.grad_wrt(d, img);
  Tensor penalty = reduce_sum_all(square(gi));
  tape.backward(penalty);
  EXPECT_FLOAT_EQ(tape.grad(b).value(), 0.0f);
}

// ---------------------------------------------------------------------------
// FD property over the whole elementwise surface: 100 seeds, 10-element probes
// ---------------------------------------------------------------------------

namespace {

struct ProbeSpec {
  EwOp op;
  // probe ranges keep values away from kinks and singularities
  float a_lo, a_hi;
  bool symmetric_sign;  // also probe negated values
  float b_lo = 0.0f, b_hi = 0.0f;
};

const ProbeSpec kProbes[] = {
    {EwOp::Add, 0.2f, 1.2f, true, 0.2f, 1.2f},
    {EwOp::Sub, 0.2f, 1.2f, true, 0.2f, 1.2f},
    {EwOp::Mul, 0.3f, 1.3f, true, 0.3f, 1.3f},
    {EwOp::Div, 0.3f, 1.3f, true, 0.4f, 1.3f},
    {EwOp::Atan2, 0.4f, 1.2f, false, 0.4f, 1.2f},
    {EwOp::Exp, 0.2f, 1.5f, true},
    {EwOp::Log, 0.3f, 2.2f, false},
    {EwOp::Sin, 0.2f, 1.2f, true},
    {EwOp::Cos, 0.2f, 1.2f, true},
    {EwOp::Sqrt, 0.2f, 2.2f, false},
    {EwOp::Relu, 0.2f, 2.0f, false},
    {EwOp::LeakyRelu, 0.2f, 2.0f, true},
    {EwOp::Softplus, 0.2f, 2.0f, true},
    {EwOp::Sigmoid, 0.2f, 2.0f, true},
    {EwOp::Negate, 0.2f, 2.0f, true},
    {EwOp::Clamp, 0.02f, 0.35f, true},
};

Tensor probe_tensor(const ProbeSpec& s, float lo, float hi, Rng& rng, int64_t n) {
  Tensor t = Tensor::zeros({n});
  for (int64_t i = 0; i < n; ++i) {
    float v = static_cast<float>(rng.uniform(lo, hi));
    if (s.symmetric_sign && rng.uniform() < 0.5) v = -v;
    t.data()[i] = v;
  }
  return t;
}

}  // namespace

TEST(FdProperty, EveryElementwiseOpHundredSeeds) {
  const int64_t n = 10;
  for (const ProbeSpec& spec : kProbes) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(1000 + seed);
      Tensor a = probe_tensor(spec, spec.a_lo, spec.a_hi, rng, n);
      Tensor b;
      if (ew_is_binary(spec.op)) b = probe_tensor(spec, spec.b_lo, spec.b_hi, rng, n);
      Tensor w = Tensor::rand_uniform({n}, rng, 0.5f, 1.5f);

      auto run = [&](const Tensor& aa, const Tensor& bb) {
        Tensor out = elementwise(spec.op, aa, ew_is_binary(spec.op) ? &bb : nullptr, -0.5f, 0.5f);
        return reduce_sum_all(mul(out, w));
      };

      Tape tape;
      Tensor at = tape.watch(a);
      Tensor bt = ew_is_binary(spec.op) ? tape.watch(b) : Tensor();
      Tensor loss = run(at, bt);
      tape.backward(loss);
      Tensor ga = tape.grad(at);

      auto fd_a = fd_gradient([&] { return static_cast<double>(run(a, b).value()); }, a.data(), n);
      auto cmp = fd_compare(ga.data(), fd_a, 1e-3, 5e-5);
      ASSERT_TRUE(cmp.ok) << "op " << static_cast<int>(spec.op) << " seed " << seed
                          << " input-a max rel err " << cmp.max_rel;

      if (ew_is_binary(spec.op)) {
        Tensor gb = tape.grad(bt);
        auto fd_b = fd_gradient([&] { return static_cast<double>(run(a, b).value()); }, b.data(), n);
        auto cmp_b = fd_compare(gb.data(), fd_b, 1e-3, 5e-5);
        ASSERT_TRUE(cmp_b.ok) << "op " << static_cast<int>(spec.op) << " seed " << seed
                              << " input-b max rel err " << cmp_b.max_rel;
      }
    }
  }
}

TEST(FdProperty, ReduceOps) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    // keep each column's top-2 gap well above the FD step so the max's
    // argmax cannot flip under perturbation
    Tensor a;
    for (;;) {
      a = Tensor::rand_uniform({4, 5}, rng, -1.0f, 1.0f);
      bool ok = true;
      for (int64_t j = 0; j < 5 && ok; ++j) {
        float top = -2.0f, second = -2.0f;
        for (int64_t i = 0; i < 4; ++i) {
          float v = a[i * 5 + j];
          if (v > top) {
            second = top;
            top = v;
          } else if (v > second) {
            second = v;
          }
        }
        if (top - second < 0.1f) ok = false;
      }
      if (ok) break;
    }
    Tensor w = Tensor::rand_uniform({5}, rng, 0.5f, 1.5f);

    auto run = [&](const Tensor& aa) {
      Tensor s = reduce_sum(aa, 0);
      Tensor m = reduce_mean(aa, 0);
      Tensor mx = reduce_max(aa, 0);
      return reduce_sum_all(mul(add(add(s, m), mx), w));
    };

    Tape tape;
    Tensor at = tape.watch(a);
    tape.backward(run(at));
    Tensor g = tape.grad(at);

    auto fd = fd_gradient([&] { return static_cast<double>(run(a).value()); }, a.data(), a.numel(), 1e-2);
    auto cmp = fd_compare(g.data(), fd, 1e-3, 1e-4);
    ASSERT_TRUE(cmp.ok) << "seed " << seed << " max rel err " << cmp.max_rel;
  }
}

TEST(FdProperty, ShapeOpsComposite) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(900 + seed);
    Tensor a = Tensor::rand_uniform({3, 4}, rng, -1.0f, 1.0f);

    auto run = [&](const Tensor& aa) {
      Tensor t = transpose(aa);                       // [4,3]
      Tensor s1 = slice(t, 0, 1, 2);                  // [2,3]
      Tensor c = concat({s1, s1}, 1);                 // [2,6]
      Tensor r = reshape(c, {12});
      Tensor b = broadcast_axis(r, 0, 3);             // [3,12]
      return reduce_sum_all(mul(b, b));
    };

    Tape tape;
    Tensor at = tape.watch(a);
    tape.backward(run(at));
    Tensor g = tape.grad(at);

    auto fd = fd_gradient([&] { return static_cast<double>(run(a).value()); }, a.data(), a.numel(), 1e-2);
    auto cmp = fd_compare(g.data(), fd, 1e-3, 1e-4);
    ASSERT_TRUE(cmp.ok) << "seed " << seed << " max rel err " << cmp.max_rel;
  }
}

TEST(FdProperty, Im2colAdjointAndConvGrad) {
  Rng rng(42);
  ConvGeom geom{1, 5, 5, 2, 3, 2, 1};
  Tensor x = Tensor::rand_uniform({1, 5, 5, 2}, rng, -1.0f, 1.0f);
  Tensor y = Tensor::rand_uniform({geom.batch * geom.out_h() * geom.out_w(), 3 * 3 * 2}, rng, -1.0f, 1.0f);

  // <im2col(x), y> == <x, col2im(y)>: the pair is mutually adjoint
  Tensor lhs = reduce_sum_all(mul(im2col(x, geom), y));
  Tensor rhs = reduce_sum_all(mul(x, col2im(y, geom)));
  EXPECT_NEAR(lhs.value(), rhs.value(), 1e-4);

  // gradient through an im2col+matmul convolution
  Tensor w = Tensor::rand_uniform({3 * 3 * 2, 4}, rng, -0.5f, 0.5f);
  auto run = [&](const Tensor& ww) {
    return reduce_sum_all(square(matmul(im2col(x, geom), ww)));
  };
  Tape tape;
  Tensor wt = tape.watch(w);
  tape.backward(run(wt));
  Tensor g = tape.grad(wt);
  auto fd = fd_gradient([&] { return static_cast<double>(run(w).value()); }, w.data(), w.numel(), 1e-2);
  auto cmp = fd_compare(g.data(), fd, 1e-3, 1e-4);
  EXPECT_TRUE(cmp.ok) << "max rel err " << cmp.max_rel;
}

// ---------------------------------------------------------------------------
// Determinism
// ---------------------------------------------------------------------------

TEST(Determinism, IdenticalSeedsGiveBitIdenticalForwardAndGrads) {
  auto run = [](uint64_t seed, FloatBuf* fwd, FloatBuf* grad) {
    Rng rng(seed);
    Tensor a = Tensor::randn({8, 8}, rng);
    Tensor b = Tensor::randn({8, 8}, rng);
    Tape tape;
    Tensor at = tape.watch(a);
    Tensor h = relu(matmul(at, b));
    Tensor loss = reduce_sum_all(mul(h, h));
    tape.backward(loss);
    *fwd = loss.buf();
    *grad = tape.grad(at).buf();
  };
  FloatBuf f1, g1, f2, g2;
  run(1234, &f1, &g1);
  run(1234, &f2, &g2);
  EXPECT_EQ(0, std::memcmp(f1.data(), f2.data(), f1.size() * sizeof(float)));
  EXPECT_EQ(0, std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)));
}
