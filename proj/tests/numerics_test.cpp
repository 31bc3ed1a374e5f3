#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "otter/numerics/adam.hpp"
#include "otter/numerics/autodiff.hpp"
#include "otter/numerics/grad_check.hpp"
#include "otter/numerics/layers.hpp"

namespace {

using namespace otter::num;

Tensor random_tensor(Shape s, otter::Rng& rng, double scale = 0.5) {
  Tensor t(std::move(s));
  for (double& x : t.values()) x = rng.uniform(-scale, scale);
  return t;
}

TEST(Ops, ReluZeroesNegativesAndZero) {
  Tape t;
  Var x = t.constant(Tensor::vector({-1.0, 0.0, 2.0}));
  EXPECT_EQ(relu(x).value().vec(), (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(Ops, ReluSubgradientAtZeroIsZero) {
  Tape t;
  Var x = t.param(Tensor::vector({0.0}));
  t.backward(sum(relu(x)));
  EXPECT_EQ(t.grad(x)[0], 0.0);
}

TEST(Ops, SigmoidOfZeroIsHalf) {
  Tape t;
  Var x = t.constant(Tensor::scalar(0.0));
  EXPECT_DOUBLE_EQ(sigmoid(x).value()[0], 0.5);
}

TEST(Ops, SigmoidStaysInsideUnitInterval) {
  otter::Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-30.0, 30.0);
    const double s = sigmoid(x);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Ops, BceOfHalfAgainstPositiveIsLn2) {
  Tape t;
  Var p = t.constant(Tensor::scalar(0.5));
  EXPECT_NEAR(bce(p, Tensor::scalar(1.0)).value()[0], std::log(2.0), 1e-15);
  Var z = t.constant(Tensor::scalar(0.0));
  EXPECT_NEAR(bce_with_logits(z, Tensor::scalar(1.0)).value()[0], std::log(2.0), 1e-15);
}

TEST(Ops, BceIsNonNegative) {
  otter::Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    Tape t;
    Var x = t.constant(Tensor::scalar(rng.uniform(-10, 10)));
    EXPECT_GE(bce_with_logits(x, Tensor::scalar(rng.coin() ? 1.0 : 0.0)).value()[0], 0.0);
  }
}

TEST(Ops, MatmulShapeMismatchThrows) {
  Tape t;
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeMismatch";
  } catch (const otter::Error& e) {
    EXPECT_EQ(e.code(), otter::Errc::ShapeMismatch);
  }
}

TEST(Ops, MatmulMatchesHandComputation) {
  Tape t;
  Var a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b = t.constant(Tensor::matrix(2, 1, {5, 6}));
  EXPECT_EQ(matmul(a, b).value().vec(), (std::vector<double>{17, 39}));
}

TEST(Ops, NonFiniteLossIsReported) {
  Tape t;
  Var p = t.constant(Tensor::scalar(std::nan("")));
  Var y = t.constant(Tensor::scalar(1.0));
  EXPECT_THROW(mse(p, y), otter::Error);
}

TEST(GradCheck, SquareAtThree) {
  TapeFunction f = [](Tape&, std::span<const Var> p) { return sum(mul(p[0], p[0])); };
  EXPECT_LT(grad_check(f, {Tensor::scalar(3.0)}), 1e-8);
  Tape t;
  Var x = t.param(Tensor::scalar(3.0));
  t.backward(sum(mul(x, x)));
  EXPECT_NEAR(t.grad(x)[0], 6.0, 1e-12);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  TapeFunction f = [](Tape& t, std::span<const Var>) { return t.constant(Tensor::scalar(7.0)); };
  EXPECT_EQ(grad_check(f, {Tensor::vector({1.0, 2.0})}), 0.0);
}

// Every primitive composed into one scalar, checked at random points.
TEST(GradCheck, AllPrimitivesComposite) {
  otter::Rng rng(11);
  auto seg = std::make_shared<Segments>();
  seg->add(std::vector<std::size_t>{0, 2});
  seg->add(std::vector<std::size_t>{});
  seg->add(std::vector<std::size_t>{1, 1, 3});
  TapeFunction f = [seg](Tape& t, std::span<const Var> p) {
    Var h = add_bias(matmul(p[0], p[1]), p[2]);            // 4x3
    Var s = sigmoid(h);
    Var r = relu(affine(h, 1.5, 0.1));
    Var c = concat_cols({s, r});                           // 4x6
    Var m = segment_mean(c, seg);                          // 3x6
    Var g = gather_rows(c, {3, 0, 0});                     // 3x6
    Var sc = scatter_rows(g, {1, 1, 0}, 2);                // 2x6
    Var rows = concat_rows(std::vector<Var>{m, sc});       // 5x6
    Var norms = row_l2norm(sub(rows, t.constant(Tensor({5, 6}, 0.05))));
    Var total = add(sum(norms), mean(row_sum(mul(rows, rows))));
    Var target = t.constant(Tensor::vector({0.3, -0.2, 0.1, 0.7, 0.0}));
    Var l1 = mse(reshape(row_sum(rows), {5}), target);
    Var l2 = bce_with_logits(reshape(row_sum(m), {3}), Tensor::vector({1, 0, 1}));
    Var l3 = bce(reshape(sigmoid(row_sum(sc)), {2}), Tensor::vector({0, 1}));
    return add(add(total, l1), add(l2, scale(l3, 0.5)));
  };
  std::vector<Tensor> params{random_tensor({4, 5}, rng), random_tensor({5, 3}, rng), random_tensor({3}, rng)};
  EXPECT_LT(grad_check(f, params), 1e-6);
}

TEST(GradCheck, MlpRegression) {
  otter::Rng rng(5);
  Mlp mlp = Mlp::init(3, {4, 4}, 1, rng);
  Tensor x = random_tensor({6, 3}, rng, 1.0);
  Tensor y = random_tensor({6, 1}, rng, 1.0);
  std::vector<Tensor> params;
  mlp.visit("mlp", [&](const std::string&, Tensor& p) { params.push_back(p); });
  TapeFunction f = [&](Tape& t, std::span<const Var> p) {
    Var h = t.constant(x);
    for (std::size_t i = 0; i < p.size(); i += 2) {
      h = add_bias(matmul(h, p[i]), p[i + 1]);
      if (i + 2 < p.size()) h = relu(h);
    }
    return mse(h, t.constant(y));
  };
  EXPECT_LT(grad_check(f, params), 1e-6);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Tensor p = Tensor::vector({1.0, -2.0});
  Tensor g = Tensor::vector({0.0, 0.0});
  AdamState st;
  adam_step({{"p", &p, &g}}, st, {.lr = 0.1});
  EXPECT_EQ(p.vec(), (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, OneStepOnSquareDecreasesX) {
  Tensor x = Tensor::scalar(1.0);
  Tape t;
  Var v = t.param(x);
  t.backward(sum(mul(v, v)));
  Tensor g = t.grad(v);
  AdamState st;
  adam_step({{"x", &x, &g}}, st, {.lr = 0.1});
  EXPECT_LT(x[0], 1.0);
  EXPECT_NEAR(x[0], 0.9, 1e-6);
}

TEST(Adam, RunsAreBitReproducible) {
  auto run = [] {
    otter::Rng rng(9);
    Tensor w = random_tensor({3, 2}, rng);
    AdamState st;
    for (int i = 0; i < 20; ++i) {
      Tape t;
      Var v = t.param(w);
      t.backward(mean(mul(v, v)));
      Tensor g = t.grad(v);
      adam_step({{"w", &w, &g}}, st, {.lr = 0.05});
    }
    return w;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatchThrows) {
  Tensor p = Tensor::vector({1.0});
  Tensor g = Tensor::vector({1.0, 2.0});
  AdamState st;
  EXPECT_THROW(adam_step({{"p", &p, &g}}, st, {}), otter::Error);
}

}  // namespace
