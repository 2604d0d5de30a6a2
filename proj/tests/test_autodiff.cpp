#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace jointvit;
using jointvit::testing::fd_error;
using jointvit::testing::random_tensor;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

}  // namespace

TEST(Tensor, ShapeInvariants) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(shape_string(t.shape()), "[2x3]");
  EXPECT_THROW(Tensor({2, 0}), Error);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), Error);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tape tape;
  Var i = tape.constant(mat(2, 2, {1, 0, 0, 1}));
  Var b = tape.constant(mat(2, 2, {3, 4, 5, 6}));
  EXPECT_EQ(matmul(i, b).value().values(), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
  Tape tape;
  Var a = tape.constant(mat(1, 2, {1, 2}));
  Var b = tape.constant(mat(2, 1, {3, 4}));
  Var c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.value()[0], 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected a dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dimension);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientOfSumMatchesRowSumsAndFiniteDifferences) {
  Tensor a = random_tensor({3, 4}, 1);
  Tensor b = random_tensor({4, 2}, 2);
  Tape tape;
  GradientStore g = tape.backward(sum(matmul(tape.parameter(a), tape.parameter(b))));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p)
      EXPECT_DOUBLE_EQ(g(a)[i * 4 + p], b.at(p, 0) + b.at(p, 1));
  auto f = [&](Tape& t) { return sum(matmul(t.parameter(a), t.parameter(b))); };
  EXPECT_LT(fd_error(f, {&a, &b}), 1e-6);
}

TEST(Softmax, UniformOnEqualInputs) {
  Tape tape;
  Var s = softmax(tape.constant(Tensor({3}, std::vector<double>{0, 0, 0})), 0);
  for (double v : s.value().values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, StableForLargeInputs) {
  Tape tape;
  Var s = softmax(tape.constant(Tensor({2}, std::vector<double>{1000, 1000})), 0);
  EXPECT_EQ(s.value()[0], 0.5);
  EXPECT_EQ(s.value()[1], 0.5);
}

TEST(Softmax, MatchesHighPrecisionReference) {
  // 50-digit reference values, see tests/oracles/reference_values.py.
  const double expected[] = {0.090030573170380457998, 0.24472847105479765247,
                             0.66524095577482188953};
  Tape tape;
  Var s = softmax(tape.constant(Tensor({3}, std::vector<double>{1, 2, 3})), 0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.value()[i], expected[i], 1e-12);
}

TEST(Softmax, RowsSumToOneOnEitherAxis) {
  Tensor x = random_tensor({4, 5}, 3, 3.0);
  Tape tape;
  for (std::size_t axis : {0u, 1u}) {
    Var s = softmax(tape.constant(x), axis);
    const std::size_t outer = axis == 1 ? 4 : 5, inner = axis == 1 ? 5 : 4;
    for (std::size_t o = 0; o < outer; ++o) {
      double total = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double v = axis == 1 ? s.value().at(o, i) : s.value().at(i, o);
        EXPECT_GT(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-14);
    }
  }
}

TEST(Softmax, RejectsNonFiniteInputAndBadAxis) {
  Tape tape;
  Var bad = tape.constant(Tensor({2}, std::vector<double>{1.0, std::numeric_limits<double>::quiet_NaN()}));
  try {
    softmax(bad, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
  }
  EXPECT_THROW(softmax(tape.constant(Tensor({2})), 1), Error);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Tensor x = random_tensor({3, 4}, 4);
  Tensor w = random_tensor({3, 4}, 5);
  auto f = [&](Tape& t) { return sum(mul(softmax(t.parameter(x), 1), t.constant(w))); };
  EXPECT_LT(fd_error(f, {&x}), 1e-7);
}

TEST(LayerNorm, ConstantVectorMapsToZero) {
  Tape tape;
  Var y = layer_norm(tape.constant(Tensor({1, 4}, 7.0)), tape.constant(Tensor({4}, 1.0)),
                     tape.constant(Tensor({4}, 0.0)));
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, ZeroGammaYieldsBeta) {
  Tensor beta({4}, std::vector<double>{0.5, -1, 2, 3});
  Tape tape;
  Var y = layer_norm(tape.constant(random_tensor({3, 4}, 6)), tape.constant(Tensor({4}, 0.0)),
                     tape.constant(beta));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y.value().at(r, c), beta[c]);
}

TEST(LayerNorm, NormalizesEachRow) {
  Tape tape;
  Var y = layer_norm(tape.constant(random_tensor({5, 8}, 7, 4.0)), tape.constant(Tensor({8}, 1.0)),
                     tape.constant(Tensor({8}, 0.0)), 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 8; ++c) m += y.value().at(r, c) / 8.0;
    for (std::size_t c = 0; c < 8; ++c) v += std::pow(y.value().at(r, c) - m, 2) / 8.0;
    EXPECT_NEAR(m, 0.0, 1e-14);
    EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(LayerNorm, WidthMismatchIsDimensionError) {
  Tape tape;
  try {
    layer_norm(tape.constant(Tensor({2, 4})), tape.constant(Tensor({3}, 1.0)), tape.constant(Tensor({3})));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dimension);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Tensor x = random_tensor({2, 4}, 8);
  Tensor g = random_tensor({4}, 9);
  Tensor b = random_tensor({4}, 10);
  Tensor w = random_tensor({2, 4}, 11);
  auto f = [&](Tape& t) {
    return sum(mul(layer_norm(t.parameter(x), t.parameter(g), t.parameter(b)), t.constant(w)));
  };
  EXPECT_LT(fd_error(f, {&x, &g, &b}), 1e-5);
}

TEST(Gelu, ZeroAndAsymptote) {
  Tape tape;
  Var y = gelu(tape.constant(Tensor({2}, std::vector<double>{0.0, 10.0})));
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_NEAR(y.value()[1], 10.0, 1e-6);
}

TEST(Gelu, GradientAtHalfMatchesFiniteDifference) {
  Tensor x({1}, std::vector<double>{0.5});
  auto f = [&](Tape& t) { return sum(gelu(t.parameter(x))); };
  Tape tape;
  const double analytic = tape.backward(f(tape))(x)[0];
  const double h = 1e-5;
  auto at = [](double v) {
    return 0.5 * v * (1.0 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)));
  };
  EXPECT_NEAR(analytic, (at(0.5 + h) - at(0.5 - h)) / (2 * h), 1e-6);
  EXPECT_LT(fd_error(f, {&x}), 1e-6);
}

TEST(Backward, SumGivesOnes) {
  Tensor w({3}, std::vector<double>{4, 5, 6});
  Tape tape;
  GradientStore g = tape.backward(sum(tape.parameter(w)));
  EXPECT_EQ(std::vector<double>(g(w).begin(), g(w).end()), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, HalfSquaredNormGivesWeights) {
  Tensor w({3}, std::vector<double>{1, 2, 3});
  Tape tape;
  Var v = tape.parameter(w);
  GradientStore g = tape.backward(scale(sum(mul(v, v)), 0.5));
  EXPECT_EQ(std::vector<double>(g(w).begin(), g(w).end()), (std::vector<double>{1, 2, 3}));
}

TEST(Backward, UnreachableParameterGetsZeroGradient) {
  Tensor used({2}, 1.0), unused({3}, 1.0);
  Tape tape;
  Var u = tape.parameter(used);
  tape.parameter(unused);
  GradientStore g = tape.backward(sum(u));
  ASSERT_TRUE(g.contains(unused));
  for (double v : g(unused)) EXPECT_EQ(v, 0.0);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor w({1}, std::vector<double>{3.0});
  Tape tape;
  Var v = tape.parameter(w);
  Var y = add(mul(v, v), scale(v, 2.0));  // y = w^2 + 2w
  EXPECT_EQ(tape.backward(sum(y))(w)[0], 8.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor w({3}, 1.0);
  Tape tape;
  try {
    tape.backward(tape.parameter(w));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Contract);
  }
}

TEST(Ops, EveryDifferentiableOpPassesFiniteDifferences) {
  Tensor a = random_tensor({3, 4}, 20), b = random_tensor({3, 4}, 21);
  Tensor bias = random_tensor({4}, 22), w = random_tensor({6, 4}, 23);
  Tensor pos = random_tensor({3, 4}, 24);
  for (double& v : pos.data()) v = std::abs(v) + 0.5;
  Tensor targets({3, 4});
  for (std::size_t i = 0; i < 12; i += 3) targets[i] = 1.0;

  const std::vector<std::pair<const char*, std::function<Var(Tape&)>>> cases = {
      {"transpose", [&](Tape& t) { return sum(mul(transpose(t.parameter(a)), t.constant(random_tensor({4, 3}, 30)))); }},
      {"add_sub", [&](Tape& t) { return sum(mul(sub(add(t.parameter(a), t.parameter(b)), t.parameter(b)), t.parameter(a))); }},
      {"add_bias", [&](Tape& t) { return sum(mul(add_bias(t.parameter(a), t.parameter(bias)), t.parameter(b))); }},
      {"mean", [&](Tape& t) { return mean(mul(t.parameter(a), t.parameter(a))); }},
      {"log", [&](Tape& t) { return sum(log(t.parameter(pos))); }},
      {"reshape", [&](Tape& t) { return sum(mul(reshape(t.parameter(a), {4, 3}), t.constant(random_tensor({4, 3}, 31)))); }},
      {"slices", [&](Tape& t) {
         Var x = t.parameter(a);
         return sum(mul(slice_rows(x, 1, 2), slice_cols(slice_rows(x, 0, 2), 0, 4)));
       }},
      {"concat", [&](Tape& t) {
         Var x = t.parameter(a);
         Var y = concat_rows({x, t.parameter(b)});  // 6 x 4
         return sum(mul(concat_cols({y, y}), concat_cols({t.parameter(w), y})));
       }},
      {"repeat_rows", [&](Tape& t) {
         return sum(mul(repeat_rows(reshape(t.parameter(bias), {1, 4}), 3), t.parameter(a)));
       }},
      {"bce", [&](Tape& t) { return sigmoid_bce_mean(t.parameter(a), targets); }},
      {"squared_error", [&](Tape& t) { return squared_error_mean(t.parameter(a), targets); }},
  };
  for (const auto& [name, f] : cases) {
    EXPECT_LT(fd_error(f, {&a, &b, &bias, &w, &pos}), 1e-6) << name;
  }
}

TEST(Ops, DropoutIsIdentityAtZeroAndUnbiasedOtherwise) {
  Tensor x = random_tensor({50, 40}, 40);
  Rng rng(1);
  Tape tape;
  EXPECT_TRUE(bitwise_equal(dropout(tape.constant(x), 0.0, rng).value(), x));
  Var y = dropout(tape.constant(Tensor({200, 200}, 1.0)), 0.25, rng);
  double m = 0.0;
  for (double v : y.value().values()) m += v / 40000.0;
  EXPECT_NEAR(m, 1.0, 0.02);
}

TEST(GradCheck, RejectsNonScalarAndBadEps) {
  Tensor x({2}, 1.0);
  std::vector<Tensor*> params{&x};
  EXPECT_THROW(grad_check([&](Tape& t) { return t.parameter(x); }, params), Error);
  EXPECT_THROW(grad_check([&](Tape& t) { return sum(t.parameter(x)); }, params, 0.0), Error);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A hand-written op whose backward is off by a factor of two.
  Tensor x({3}, std::vector<double>{0.1, 0.2, 0.3});
  auto broken = [&](Tape& t) {
    Var p = t.parameter(x);
    Var y = t.record(p.value(), {p}, [](BackwardContext& ctx) {
      for (std::size_t i = 0; i < ctx.output_grad.size(); ++i) ctx.input_grads[0][i] += 2.0 * ctx.output_grad[i];
    });
    return sum(y);
  };
  std::vector<Tensor*> params{&x};
  EXPECT_GT(grad_check(broken, params).max_rel_error, 0.4);
}
