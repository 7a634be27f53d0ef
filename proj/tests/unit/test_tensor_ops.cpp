#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracle.hpp"
#include "reinlab/errors.hpp"
#include "reinlab/gradcheck.hpp"
#include "reinlab/ops.hpp"
#include "reinlab/rng.hpp"

namespace reinlab {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

TEST(TensorTest, ShapeAndDataLength) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.data().size(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<Scalar>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
}

TEST(MatmulTest, IdentityLeavesMatrixUnchanged) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(eye, m);
  EXPECT_EQ(std::vector<Scalar>(out.data().begin(), out.data().end()),
            (std::vector<Scalar>{1, 2, 3, 4}));
}

TEST(MatmulTest, ScalarProduct) {
  EXPECT_EQ(matmul(Tensor({1, 1}, std::vector<Scalar>{2}), Tensor({1, 1}, std::vector<Scalar>{3})).item(), 6);
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2x3] x [2x3]"), std::string::npos) << what;
  }
}

TEST(MatmulTest, GradientOfSumMatchesHandValue) {
  Tape tape;
  Tensor a({1, 2}, {1, 2}, true);
  Tensor b({2, 1}, {3, 4});
  tape.backward(sum(matmul(a, b)));
  EXPECT_FLOAT_EQ(a.grad()[0], 3);
  EXPECT_FLOAT_EQ(a.grad()[1], 4);
}

TEST(MatmulTest, AssociativeOnRandomChains) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng), c = random_tensor({3, 6}, rng);
    Tensor left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) EXPECT_NEAR(left.data()[i], right.data()[i], 1e-4);
  }
}

TEST(MatmulTest, MatchesOracleOnOddShapes) {
  Rng rng(3);
  Tensor a = random_tensor({9, 13}, rng), b = random_tensor({13, 6}, rng);
  EXPECT_LT(oracle::max_abs_diff(oracle::matmul(oracle::from(a), oracle::from(b)), matmul(a, b)), 1e-5);
  Tensor bt = random_tensor({6, 13}, rng);
  EXPECT_LT(oracle::max_abs_diff(oracle::matmul(oracle::from(a), oracle::transpose(oracle::from(bt))),
                                 matmul_nt(a, bt)),
            1e-5);
}

TEST(SoftmaxTest, EqualLogitsAreUniform) {
  Tensor s = softmax_rows(Tensor({1, 3}, {0, 0, 0}));
  for (auto v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
}

TEST(SoftmaxTest, TwoLogitExample) {
  Tensor s = softmax_rows(Tensor({1, 2}, {1, -1}));
  EXPECT_NEAR(s.data()[0], 0.8808, 1e-3);
  EXPECT_NEAR(s.data()[1], 0.1192, 1e-3);
}

TEST(SoftmaxTest, LargeLogitsDoNotOverflow) {
  Tensor s = softmax_rows(Tensor({1, 2}, {1000, 0}));
  EXPECT_EQ(s.data()[0], 1);
  EXPECT_EQ(s.data()[1], 0);
}

TEST(SoftmaxTest, NanInputIsNumericError) {
  EXPECT_THROW(softmax_rows(Tensor({1, 2}, {std::nanf(""), 0})), NumericError);
}

TEST(SoftmaxTest, RowsSumToOneAndIgnoreRowShift) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor x = random_tensor({6, 11}, rng, -5, 5);
    Tensor shifted = x.detach();
    for (std::size_t i = 0; i < 6; ++i) {
      const Scalar c = static_cast<Scalar>(rng.uniform(-10, 10));
      for (std::size_t j = 0; j < 11; ++j) shifted.data()[i * 11 + j] += c;
    }
    Tensor a = softmax_rows(x), b = softmax_rows(shifted);
    for (std::size_t i = 0; i < 6; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < 11; ++j) {
        row += a.at(i, j);
        EXPECT_NEAR(a.at(i, j), b.at(i, j), 1e-6);
      }
      EXPECT_NEAR(row, 1.0, 1e-6);
    }
  }
}

TEST(OpsTest, LayerNormMatchesOracle) {
  Rng rng(4);
  Tensor x = random_tensor({5, 8}, rng, -3, 3), g = random_tensor({8}, rng), b = random_tensor({8}, rng);
  auto want = oracle::layer_norm(oracle::from(x), oracle::from(g), oracle::from(b));
  EXPECT_LT(oracle::max_abs_diff(want, layer_norm_rows(x, g, b)), 1e-5);
}

TEST(OpsTest, GeluTanhFormAgreesWithExactForm) {
  std::vector<Scalar> xs;
  for (int i = -60; i <= 60; ++i) xs.push_back(static_cast<Scalar>(i) / 10);
  Tensor y = gelu(Tensor({xs.size()}, xs));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double exact = 0.5 * xs[i] * (1 + std::erf(xs[i] / std::sqrt(2.0)));
    EXPECT_NEAR(y.data()[i], exact, 1e-3);
  }
}

TEST(OpsTest, SlicesAndConcatenation) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = slice_rows(x, 1, 1);
  EXPECT_EQ(r.shape(), (Shape{1, 3}));
  EXPECT_EQ(r.at(0, 2), 6);
  Tensor c = slice_cols(x, 1, 2);
  EXPECT_EQ(c.at(1, 0), 5);
  const Tensor parts[] = {c, slice_cols(x, 0, 1)};
  Tensor joined = concat_cols(parts);
  EXPECT_EQ(joined.shape(), (Shape{2, 3}));
  EXPECT_EQ(joined.at(0, 2), 1);
  EXPECT_THROW(slice_rows(x, 1, 2), ShapeError);
}

TEST(OpsTest, MaxAndMeanAcrossTensors) {
  const Tensor xs[] = {Tensor({1, 1}, std::vector<Scalar>{1}), Tensor({1, 1}, std::vector<Scalar>{3})};
  EXPECT_EQ(max_over(xs).item(), 3);
  EXPECT_EQ(mean_over(xs).item(), 2);
  EXPECT_THROW(max_over(std::span<const Tensor>{}), ContractError);
}

TEST(OpsTest, ReshapeAndTranspose) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = transpose(x);
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(t.at(2, 1), 6);
  EXPECT_EQ(reshape(x, {3, 2}).at(2, 0), 5);
  EXPECT_THROW(reshape(x, {4, 2}), ShapeError);
}

TEST(OpsTest, CrossEntropyMatchesScalarLoop) {
  Rng rng(8);
  Tensor logits = random_tensor({7, 4}, rng, -2, 2);
  std::vector<std::uint8_t> labels = {0, 3, 255, 1, 2, 2, 255};
  double want = 0;
  int counted = 0;
  for (std::size_t i = 0; i < 7; ++i) {
    if (labels[i] == 255) continue;
    double z = 0;
    for (std::size_t k = 0; k < 4; ++k) z += std::exp(static_cast<double>(logits.at(i, k)));
    want += std::log(z) - logits.at(i, labels[i]);
    ++counted;
  }
  EXPECT_NEAR(cross_entropy_rows(logits, labels).item(), want / counted, 1e-6);
  std::vector<std::uint8_t> ignored(7, 255);
  EXPECT_THROW(cross_entropy_rows(logits, ignored), ContractError);
}

TEST(FiniteDifferenceTest, QuadraticIsExact) {
  Tensor x({1}, std::vector<Scalar>{3});
  Tensor g = finite_difference_gradient([](const Tensor& t) { double v = t.data()[0]; return v * v; }, x, 1e-3);
  EXPECT_NEAR(g.data()[0], 6.0, 1e-2);  // float32 input; the f64 build checks 1e-5
  EXPECT_EQ(x.data()[0], 3);
}

TEST(FiniteDifferenceTest, SumGivesOnes) {
  Tensor x({2, 2}, {1, -2, 0.5f, 4});
  Tensor g = finite_difference_gradient([](const Tensor& t) {
    double s = 0;
    for (auto v : t.data()) s += v;
    return s;
  }, x, 1e-2);
  for (auto v : g.data()) EXPECT_NEAR(v, 1.0, 1e-3);
}

TEST(FiniteDifferenceTest, NonFiniteOutputIsNumericError) {
  Tensor x({1}, std::vector<Scalar>{1});
  EXPECT_THROW(finite_difference_gradient([](const Tensor&) { return std::nan(""); }, x, 1e-3),
               NumericError);
}

TEST(GemmTest, KernelIsDeterministic) {
  Rng rng(1);
  std::vector<Scalar> a(37 * 29), b(29 * 41);
  for (auto& v : a) v = static_cast<Scalar>(rng.uniform(-1, 1));
  for (auto& v : b) v = static_cast<Scalar>(rng.uniform(-1, 1));
  std::vector<Scalar> c1(37 * 41, 0), c2(37 * 41, 0);
  gemm_accumulate(37, 29, 41, a.data(), b.data(), c1.data());
  gemm_accumulate(37, 29, 41, a.data(), b.data(), c2.data());
  EXPECT_EQ(c1, c2);
}

}  // namespace
}  // namespace reinlab
