#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "ldct/autodiff.hpp"
#include "primitive_cases.hpp"
#include "test_util.hpp"

using namespace ldct;
using namespace ldct::ad;
using ldct::testing::random_tensor;
using ldct::testing::primitive_cases;

TEST(Primitives, ReluZeroesNegativesAndZero) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>::from({-1, 0, 2}, {3}));
  auto y = relu(x);
  EXPECT_EQ(y.value(), Tensor<double>::from({0, 0, 2}, {3}));
}

TEST(Primitives, IdentityKernelConvolutionPreservesImage) {
  Tape<double> tape;
  auto img = random_tensor<double>({2, 1, 7, 9}, 11);
  Tensor<double> k({1, 1, 3, 3});
  k[4] = 1.0;
  auto y = conv2d(tape.constant(img), tape.constant(k), 1, Padding::Same);
  EXPECT_EQ(y.value(), img);
}

TEST(Primitives, FrobeniusSquareOfTwoByTwo) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>::from({1, 2, 3, 4}, {2, 2}));
  EXPECT_DOUBLE_EQ(frobenius_sq(x).value().item(), 30.0);
}

TEST(Primitives, StridedConvolutionOutputSize) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 3, 64, 64}));
  auto w = tape.constant(Tensor<float>({8, 3, 3, 3}));
  EXPECT_EQ(conv2d(x, w, 2, Padding::Same).shape(), (Shape{1, 8, 32, 32}));
  EXPECT_EQ(conv2d(x, w, 1, Padding::Valid).shape(), (Shape{1, 8, 62, 62}));
}

TEST(Primitives, ShapeMismatchNamesDimensions) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 3}));
  auto b = tape.constant(Tensor<double>({3, 2}));
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[3, 2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
  auto img = tape.constant(Tensor<double>({1, 2, 5, 5}));
  auto k = tape.constant(Tensor<double>({4, 3, 3, 3}));
  EXPECT_THROW(conv2d(img, k), ShapeError);
}

TEST(Primitives, ZeroDimensionRejected) { EXPECT_THROW(Tensor<float>({2, 0}), ShapeError); }

TEST(Backward, SquareDerivative) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>::scalar(3.0));
  auto g = backward(tape, square(x).id());
  EXPECT_DOUBLE_EQ(g.at(x.id()).item(), 6.0);
}

TEST(Backward, NormOfScaledVectorMatchesAnalyticAndFiniteDifferences) {
  auto xv = random_tensor<double>({5}, 3);
  auto f = [&](Tape<double>& t, const std::vector<Var<double>>& leaves) {
    auto a = broadcast_scalar(leaves[0], Shape{5});
    return sqrt(frobenius_sq(mul(a, t.constant(xv))));
  };
  for (double a0 : {-1.7, 0.4, 2.5}) {
    Tape<double> tape;
    auto a = tape.variable(Tensor<double>::scalar(a0));
    auto out = f(tape, {a});
    double analytic = gradients(out, {a})[0].item();
    double norm = 0;
    for (double v : xv.values()) norm += v * v;
    norm = std::sqrt(norm);
    EXPECT_NEAR(analytic, (a0 > 0 ? 1 : -1) * norm, 1e-12);
    auto check = check_gradients<double>(f, {Tensor<double>::scalar(a0)}, {.step = 1e-6});
    EXPECT_LT(check.max_rel_error, 1e-6);
  }
}

TEST(Backward, SecondDerivativeOfCube) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>::scalar(2.0));
  auto y = mul(mul(x, x), x);
  auto dy = grad(y, {x}, true)[0];
  EXPECT_DOUBLE_EQ(dy.value().item(), 12.0);
  auto d2y = grad(dy, {x}, true)[0];
  EXPECT_DOUBLE_EQ(d2y.value().item(), 12.0);
}

TEST(Backward, RejectsNonScalarOutput) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({3}, 1.0));
  EXPECT_THROW(grad(square(x), {x}, false), ShapeError);
}

TEST(Backward, RejectsNodeNotOnTape) {
  Tape<double> tape;
  tape.variable(Tensor<double>::scalar(1.0));
  EXPECT_THROW(backward(tape, 42), std::out_of_range);
}

TEST(Backward, UnreachedTargetGetsZeroGradient) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({2}, 1.0));
  auto z = tape.variable(Tensor<double>({3}, 1.0));
  auto g = gradients(sum(square(x)), {z});
  EXPECT_EQ(g[0], Tensor<double>({3}));
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>::from({0.0, -0.0, 1.0}, {3}));
  auto g = gradients(sum(relu(x)), {x})[0];
  EXPECT_EQ(g, Tensor<double>::from({0.0, 0.0, 1.0}, {3}));
}

TEST(Backward, GradientsDoNotGrowTheTape) {
  Tape<double> tape;
  auto x = tape.variable(random_tensor<double>({4, 4}, 2));
  auto y = sum(square(x));
  const auto before = tape.size();
  gradients(y, {x});
  gradients(y, {x});
  EXPECT_EQ(tape.size(), before);
}

TEST(GradCheck, SumOfSquaresIsExact) {
  auto f = [](Tape<double>&, const std::vector<Var<double>>& v) { return sum(square(v[0])); };
  auto r = check_gradients<double>(f, {random_tensor<double>({3, 3}, 5)}, {.step = 1e-5});
  EXPECT_LT(r.max_rel_error, 1e-7);
  EXPECT_EQ(r.checked, 9u);
}

TEST(GradCheck, ConvReluMeanChain) {
  auto f = [](Tape<double>&, const std::vector<Var<double>>& v) {
    return mean(relu(conv2d(v[0], v[1], v[2], 1, Padding::Same)));
  };
  auto r = check_gradients<double>(
      f, {random_tensor<double>({2, 2, 6, 6}, 1), random_tensor<double>({3, 2, 3, 3}, 2), random_tensor<double>({3}, 3)},
      {.step = 1e-6});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  auto f = [](Tape<double>& t, const std::vector<Var<double>>&) { return t.constant(Tensor<double>::scalar(4.0)); };
  auto r = check_gradients<double>(f, {random_tensor<double>({4}, 9)});
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, NonFiniteValueReportsComponent) {
  auto f = [](Tape<double>&, const std::vector<Var<double>>& v) { return sum(log(v[0])); };
  Tensor<double> p = Tensor<double>::from({1.0, 0.0, 2.0}, {3});
  try {
    check_gradients<double>(f, {p});
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("component 1"), std::string::npos) << e.what();
  }
}

TEST(GradCheck, RejectsNonPositiveStep) {
  auto f = [](Tape<double>&, const std::vector<Var<double>>& v) { return sum(v[0]); };
  EXPECT_THROW(check_gradients<double>(f, {Tensor<double>({2})}, {.step = 0.0}), std::invalid_argument);
}

namespace {

template <class T>
void check_all_primitives(double step, double tolerance) {
  std::uint64_t seed = 100;
  for (const auto& pc : primitive_cases<T>()) {
    std::vector<Tensor<T>> point;
    for (const auto& s : pc.shapes) point.push_back(random_tensor<T>(s, ++seed, pc.lo, pc.hi, pc.gap));
    GradCheckOptions opt{.step = step};
    if constexpr (std::is_same_v<T, float>) opt.abs_floor = 1e-3;
    auto r = check_gradients<T>(pc.fn, point, opt);
    EXPECT_LT(r.max_rel_error, tolerance) << pc.name << " leaf " << r.worst_leaf << " component " << r.worst_component;
  }
}

}  // namespace

TEST(GradCheck, EveryPrimitiveDouble) { check_all_primitives<double>(1e-6, 1e-4); }

TEST(GradCheck, EveryPrimitiveFloat) { check_all_primitives<float>(1e-2, 1e-2); }

// Second order: differentiate a contraction of the recorded first gradient.
TEST(DoubleBackward, MatchesFiniteDifferencesOfFirstGradient) {
  using V = std::vector<Var<double>>;
  std::vector<std::pair<std::string, TapeFunction<double>>> chains;
  std::vector<std::vector<Shape>> shapes;

  chains.push_back({"conv-leaky-conv", [](Tape<double>& t, const V& v) {
                      auto h = leaky_relu(conv2d(v[0], v[1], 1, Padding::Same), 0.2);
                      auto y = sum(conv2d(h, t.constant(random_tensor<double>({1, 2, 3, 3}, 8)), 2, Padding::Same));
                      auto g = grad(y, {v[0]}, true)[0];
                      return frobenius_sq(g);
                    }});
  shapes.push_back({{2, 1, 6, 6}, {2, 1, 3, 3}});

  chains.push_back({"matmul-sigmoid", [](Tape<double>& t, const V& v) {
                      auto y = sum(sigmoid(matmul(v[0], v[1])));
                      auto g = grad(y, {v[0]}, true)[0];
                      return sum(mul(g, t.constant(random_tensor<double>(g.shape(), 4))));
                    }});
  shapes.push_back({{2, 3}, {3, 2}});

  chains.push_back({"norm-penalty", [](Tape<double>&, const V& v) {
                      auto y = sum(square(conv2d(v[0], v[1], 1, Padding::Same)));
                      auto g = grad(y, {v[0]}, true)[0];
                      auto n = sqrt(sum_per_sample(square(g)));
                      return mean(square(add_scalar(n, -1.0)));
                    }});
  shapes.push_back({{2, 1, 4, 4}, {1, 1, 3, 3}});

  for (std::size_t i = 0; i < chains.size(); ++i) {
    std::vector<Tensor<double>> point;
    for (std::size_t k = 0; k < shapes[i].size(); ++k) point.push_back(random_tensor<double>(shapes[i][k], 40 + k, -1, 1, 0.05));
    auto r = check_gradients<double>(chains[i].second, point, {.step = 1e-6});
    EXPECT_LT(r.max_rel_error, 1e-3) << chains[i].first;
  }
}

TEST(TapeInvariants, ForwardIsDeterministicAndReplayable) {
  auto run = [] {
    Tape<float> tape;
    auto x = tape.variable(random_tensor<float>({2, 1, 8, 8}, 1));
    auto w = tape.variable(random_tensor<float>({4, 1, 3, 3}, 2));
    auto y = mean(relu(conv2d(x, w)));
    auto g = grad(y, {w}, true)[0];
    EXPECT_EQ(tape.replay_mismatches(), 0u);
    for (NodeId id = 0; id < tape.size(); ++id)
      for (NodeId in : tape.node(id).inputs) EXPECT_LT(in, id);
    return g.value();
  };
  EXPECT_EQ(run(), run());
}

TEST(TapeInvariants, NoGradScopeStopsTracking) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({2}, 1.0));
  {
    NoGradScope<double> scope(tape);
    EXPECT_FALSE(square(x).requires_grad());
  }
  EXPECT_TRUE(square(x).requires_grad());
}
