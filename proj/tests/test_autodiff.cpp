#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sqgan/autodiff.hpp"
#include "support.hpp"

using namespace sqgan;
using sqgan::testing::gradcheck;
using sqgan::testing::positive_tensor;
using sqgan::testing::random_tensor;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

constexpr double kTol = 1e-6;

}  // namespace

TEST(Matmul, IdentityAndDot) {
  ad::Graph g;
  auto a = g.constant(ad::Tensor::matrix({{1, 0}, {0, 1}}));
  auto b = g.constant(ad::Tensor::matrix({{2, 3}, {4, 5}}));
  EXPECT_EQ(vec(ad::matmul(a, b).value()), (std::vector<double>{2, 3, 4, 5}));
  auto r = g.constant(ad::Tensor::matrix({{1, 2}}));
  auto c = g.constant(ad::Tensor::matrix({{3}, {4}}));
  auto out = ad::matmul(r, c);
  EXPECT_EQ(out.shape(), (ad::Shape{1, 1}));
  EXPECT_EQ(out.value()[0], 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  ad::Graph g;
  auto a = g.constant(ad::Tensor({2, 3}));
  auto b = g.constant(ad::Tensor({2, 3}));
  try {
    ad::matmul(a, b);
    FAIL() << "expected a dimension error";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    const auto first = msg.find("[2x3]");
    ASSERT_NE(first, std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x3]", first + 1), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(1, "matmul");
  for (int trial = 0; trial < 100; ++trial) {
    auto r = gradcheck([](ad::Graph&, const auto& v) { return ad::sum(ad::matmul(v[0], v[1])); },
                       {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});
    ASSERT_LT(r.relative_error, kTol);
  }
}

TEST(Linear, MatchesMatmulPlusRowBias) {
  Rng rng(2, "linear");
  const auto x = random_tensor({4, 3}, rng), w = random_tensor({3, 5}, rng), b = random_tensor({5}, rng);
  ad::Graph g;
  auto out = ad::linear(g.constant(x), g.constant(w), g.constant(b));
  auto mm = ad::matmul(g.constant(x), g.constant(w));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(out.value()[i * 5 + j], mm.value()[i * 5 + j] + b[j]);
  for (int trial = 0; trial < 100; ++trial) {
    auto r = gradcheck(
        [](ad::Graph&, const auto& v) { return ad::sum(ad::tanh(ad::linear(v[0], v[1], v[2]))); },
        {random_tensor({4, 3}, rng), random_tensor({3, 5}, rng), random_tensor({5}, rng)});
    ASSERT_LT(r.relative_error, kTol);
  }
}

TEST(Elementwise, Definitions) {
  ad::Graph g;
  auto x = g.constant(ad::Tensor::vector({-1, 2}));
  EXPECT_EQ(vec(ad::leaky_relu(x, 0.2).value()), (std::vector<double>{-0.2, 2}));
  ad::Tensor zero = ad::Tensor::scalar(0.0);
  zero.set_requires_grad(true);
  ad::Graph h;
  auto e = ad::exp(h.parameter(zero));
  EXPECT_EQ(e.item(), 1.0);
  h.backward(e);
  EXPECT_EQ(zero.grad()[0], 1.0);
}

TEST(Elementwise, DomainErrorsCarryIndex) {
  ad::Graph g;
  auto x = g.constant(ad::Tensor::vector({1.0, 2.0, -3.0, 4.0}));
  try {
    ad::log(x);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_EQ(e.index, 2u);
  }
  auto y = g.constant(ad::Tensor::vector({0.0, 1.0}));
  try {
    ad::sqrt(y);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_EQ(e.index, 0u);
  }
}

TEST(Elementwise, BroadcastOnlyFromScalars) {
  ad::Graph g;
  auto a = g.constant(ad::Tensor({2, 3}, 1.0));
  auto s = g.scalar(2.0);
  EXPECT_EQ(vec(ad::mul(a, s).value()), std::vector<double>(6, 2.0));
  EXPECT_EQ(vec(ad::sub(s, a).value()), std::vector<double>(6, 1.0));
  EXPECT_THROW(ad::add(a, g.constant(ad::Tensor({3}, 1.0))), DimensionError);
  EXPECT_THROW(ad::add(a, g.constant(ad::Tensor({3, 2}, 1.0))), DimensionError);
}

struct UnaryCase {
  const char* name;
  ad::Var (*op)(ad::Var);
  bool positive;
};

class UnaryGradient : public ::testing::TestWithParam<UnaryCase> {};

TEST_P(UnaryGradient, FiniteDifferences) {
  const UnaryCase c = GetParam();
  Rng rng(3, c.name);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = c.positive ? positive_tensor({2, 3}, rng) : random_tensor({2, 3}, rng);
    const auto w = random_tensor({2, 3}, rng);
    auto r = gradcheck([&](ad::Graph&, const auto& v) { return ad::sum(ad::mul(c.op(v[0]), v[1])); }, {x, w});
    ASSERT_LT(r.relative_error, kTol) << c.name << " trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(
    Kinds, UnaryGradient,
    ::testing::Values(UnaryCase{"leaky_relu", [](ad::Var x) { return ad::leaky_relu(x, 0.2); }, false},
                      UnaryCase{"exp", [](ad::Var x) { return ad::exp(x); }, false},
                      UnaryCase{"log", [](ad::Var x) { return ad::log(x); }, true},
                      UnaryCase{"square", [](ad::Var x) { return ad::square(x); }, false},
                      UnaryCase{"sqrt", [](ad::Var x) { return ad::sqrt(x); }, true},
                      UnaryCase{"tanh", [](ad::Var x) { return ad::tanh(x); }, false},
                      UnaryCase{"softplus", [](ad::Var x) { return ad::softplus(x); }, false},
                      UnaryCase{"neg", [](ad::Var x) { return ad::neg(x); }, false},
                      UnaryCase{"scale", [](ad::Var x) { return ad::scale(x, -1.7); }, false},
                      UnaryCase{"add_scalar", [](ad::Var x) { return ad::add_scalar(x, 0.3); }, false},
                      UnaryCase{"transpose", [](ad::Var x) { return ad::transpose(ad::transpose(x)); }, false},
                      UnaryCase{"normalize_rows", [](ad::Var x) { return ad::normalize_rows(x); }, false}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Elementwise, BinaryGradients) {
  Rng rng(4, "binary");
  for (int trial = 0; trial < 100; ++trial) {
    for (auto op : {&ad::add, &ad::sub, &ad::mul}) {
      auto r = gradcheck([&](ad::Graph&, const auto& v) { return ad::sum(ad::square(op(v[0], v[1]))); },
                         {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)});
      ASSERT_LT(r.relative_error, kTol);
      auto s = gradcheck([&](ad::Graph&, const auto& v) { return ad::sum(ad::square(op(v[0], v[1]))); },
                         {random_tensor({3, 2}, rng), random_tensor({}, rng)});
      ASSERT_LT(s.relative_error, kTol);
    }
  }
}

TEST(StopGradient, ForwardIdentityAndZeroGradient) {
  ad::Tensor x = ad::Tensor::vector({2.0, 3.0});
  x.set_requires_grad(true);
  {
    ad::Graph g;
    auto xv = g.parameter(x);
    auto sg = ad::stop_gradient(xv);
    EXPECT_EQ(vec(sg.value()), vec(xv.value()));
    auto out = ad::add(ad::sum(sg), g.scalar(0.0));
    x.zero_grad();
    g.backward(out);
    EXPECT_EQ(vec(x.grad()), (std::vector<double>{0.0, 0.0}));
  }
  {
    ad::Graph g;
    auto xv = g.parameter(x);
    x.zero_grad();
    g.backward(ad::sum(ad::mul(xv, ad::stop_gradient(xv))));
    EXPECT_EQ(vec(x.grad()), (std::vector<double>{2.0, 3.0}));
  }
}

TEST(StopGradient, DetachedBranchMatchesFrozenFiniteDifferences) {
  // With the detached factor held fixed at its current value, the composed
  // function is x·c, whose numeric gradient is c.
  Rng rng(5, "sg");
  for (int trial = 0; trial < 100; ++trial) {
    ad::Tensor x = random_tensor({4}, rng);
    const ad::Tensor frozen = x;
    auto r = gradcheck(
        [&](ad::Graph& g, const auto& v) { return ad::sum(ad::mul(v[0], g.constant(frozen))); }, {x});
    ad::Tensor xp = x;
    xp.set_requires_grad(true);
    ad::Graph g;
    auto xv = g.parameter(xp);
    g.backward(ad::sum(ad::mul(xv, ad::stop_gradient(xv))));
    for (std::size_t i = 0; i < 4; ++i) ASSERT_NEAR(xp.grad()[i], frozen[i], 1e-12);
    ASSERT_LT(r.relative_error, kTol);
  }
}

TEST(StraightThrough, ForwardAndPassThrough) {
  ad::Tensor pre = ad::Tensor::vector({1.1, 1.9});
  ad::Tensor q = ad::Tensor::vector({1.0, 2.0});
  pre.set_requires_grad(true);
  q.set_requires_grad(true);
  ad::Graph g;
  auto out = ad::straight_through(g.parameter(pre), g.parameter(q));
  EXPECT_EQ(vec(out.value()), (std::vector<double>{1.0, 2.0}));
  pre.zero_grad();
  q.zero_grad();
  g.backward(ad::sum(out));
  EXPECT_EQ(vec(pre.grad()), (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(vec(q.grad()), (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(ad::straight_through(g.constant(ad::Tensor({3})), g.constant(ad::Tensor({2}))), DimensionError);
}

TEST(StraightThrough, ToyQuantizedScalarDescends) {
  // Loss (q(x) + 0.3)² with q rounding x to {0, 1}: the true derivative is
  // zero almost everywhere, the straight-through one is not.
  ad::Tensor x = ad::Tensor::scalar(0.9);
  x.set_requires_grad(true);
  const double target = -0.3;
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    ad::Graph g;
    const double q = x[0] >= 0.5 ? 1.0 : 0.0;
    auto out = ad::straight_through(g.parameter(x), g.scalar(q));
    auto loss = ad::square(ad::add_scalar(out, -target));
    losses.push_back(loss.item());
    x.zero_grad();
    g.backward(loss);
    x[0] -= 0.01 * x.grad()[0];
  }
  for (std::size_t i = 1; i < losses.size(); ++i) ASSERT_LE(losses[i], losses[i - 1]);
  EXPECT_LT(losses.back(), losses.front());
  EXPECT_LT(x[0], 0.5);
}

TEST(Reductions, Values) {
  ad::Graph g;
  EXPECT_EQ(ad::mean(g.constant(ad::Tensor::vector({1, 2, 3}))).item(), 2.0);
  EXPECT_EQ(ad::l2_norm_sq(g.constant(ad::Tensor::vector({3, 4}))).item(), 25.0);
  auto m = g.constant(ad::Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  EXPECT_EQ(vec(ad::sum(m, 0).value()), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(vec(ad::mean(m, 1).value()), (std::vector<double>{2, 5}));
  EXPECT_EQ(ad::sum(m).shape(), ad::Shape{});
  EXPECT_THROW(ad::sum(m, 2), AxisError);
}

TEST(Reductions, Gradients) {
  Rng rng(6, "reduce");
  for (int trial = 0; trial < 100; ++trial) {
    for (auto op : {&ad::sum, &ad::mean, &ad::l2_norm_sq}) {
      for (std::optional<std::size_t> axis : {std::optional<std::size_t>{}, std::optional<std::size_t>{0},
                                              std::optional<std::size_t>{1}, std::optional<std::size_t>{2}}) {
        auto r = gradcheck(
            [&](ad::Graph& g, const auto& v) {
              auto red = op(v[0], axis);
              return ad::sum(ad::mul(red, g.constant(ad::Tensor(red.shape(), 0.7))));
            },
            {random_tensor({2, 3, 2}, rng)});
        ASSERT_LT(r.relative_error, kTol);
      }
    }
  }
}

TEST(Structure, ReshapeGatherGradients) {
  Rng rng(7, "structure");
  const std::vector<std::size_t> idx = {2, 0, 2, 1};
  for (int trial = 0; trial < 100; ++trial) {
    auto r = gradcheck(
        [&](ad::Graph& g, const auto& v) {
          auto rows = ad::gather_rows(v[0], idx);
          auto flat = ad::reshape(rows, {2, 6});
          return ad::sum(ad::mul(ad::square(flat), g.constant(ad::Tensor({2, 6}, 1.3))));
        },
        {random_tensor({3, 3}, rng)});
    ASSERT_LT(r.relative_error, kTol);
  }
}

TEST(Structure, NormalizeRowsRejectsZeroRows) {
  ad::Graph g;
  try {
    ad::normalize_rows(g.constant(ad::Tensor::matrix({{1, 0}, {0, 0}})));
    FAIL();
  } catch (const DegenerateProjectionError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(Graph, BackwardRequiresScalarRoot) {
  ad::Graph g;
  ad::Tensor x({3}, 1.0);
  x.set_requires_grad(true);
  auto v = g.parameter(x);
  EXPECT_THROW(g.backward(ad::exp(v)), DimensionError);
}

TEST(Graph, GradientsIndependentOfConstructionOrder) {
  // f = sum(tanh(a·b)) + sum(exp(a) ⊙ c), built with the two branches in
  // either order.
  Rng rng(8, "order");
  for (int trial = 0; trial < 20; ++trial) {
    const auto a0 = random_tensor({3, 3}, rng), b0 = random_tensor({3, 3}, rng), c0 = random_tensor({3, 3}, rng);
    std::vector<std::vector<double>> grads[2];
    for (int order = 0; order < 2; ++order) {
      ad::Tensor a = a0, b = b0, c = c0;
      for (auto* t : {&a, &b, &c}) t->set_requires_grad(true);
      ad::Graph g;
      auto av = g.parameter(a), bv = g.parameter(b), cv = g.parameter(c);
      ad::Var left, right;
      if (order == 0) {
        left = ad::sum(ad::tanh(ad::matmul(av, bv)));
        right = ad::sum(ad::mul(ad::exp(av), cv));
      } else {
        right = ad::sum(ad::mul(ad::exp(av), cv));
        left = ad::sum(ad::tanh(ad::matmul(av, bv)));
      }
      g.backward(ad::add(left, right));
      for (auto* t : {&a, &b, &c}) grads[order].push_back(vec(t->grad()));
    }
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < 9; ++i) ASSERT_NEAR(grads[0][k][i], grads[1][k][i], 1e-12);
  }
}

TEST(Graph, UntrackedParametersReceiveNothing) {
  ad::Tensor w({2, 2}, 1.0);
  w.set_requires_grad(true);
  ad::Graph g;
  auto x = g.constant(ad::Tensor({1, 2}, 1.0));
  auto out = ad::sum(ad::matmul(x, g.parameter(w, false)));
  w.zero_grad();
  g.backward(out);
  EXPECT_EQ(vec(w.grad()), std::vector<double>(4, 0.0));
  EXPECT_FALSE(out.requires_grad());
}

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(ad::Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  ad::Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  t.set_requires_grad(true);
  t.zero_grad();
  EXPECT_EQ(t.grad().size(), t.size());
}
