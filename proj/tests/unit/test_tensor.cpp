#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "pslstm/rng.hpp"
#include "pslstm/tensor.hpp"

using namespace pslstm;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c({a.dim(0), b.dim(1)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < b.dim(1); ++j) {
            long double acc = 0;
            for (std::size_t p = 0; p < a.dim(1); ++p) acc += static_cast<long double>(a(i, p)) * b(p, j);
            c(i, j) = static_cast<double>(acc);
        }
    return c;
}

}  // namespace

TEST(Tensor, ConstructionAndIndexing) {
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t(1, 2), 1.5);
    t(1, 2) = 4.0;
    EXPECT_EQ(t[5], 4.0);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    EXPECT_THROW(t.dim(2), ShapeError);
}

TEST(Tensor, FromRowsRejectsRagged) {
    const Tensor t = Tensor::from_rows({{1, 2}, {3, 4}});
    EXPECT_EQ(t(1, 0), 3.0);
    EXPECT_THROW(Tensor::from_rows({{1, 2}, {3}}), ShapeError);
}

TEST(Tensor, ReshapeKeepsDataAndChecksSize) {
    const Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
    const Tensor r = t.reshape({3, 2});
    EXPECT_EQ(r(2, 1), 6.0);
    EXPECT_THROW(t.reshape({4, 2}), ShapeError);
}

TEST(Matmul, MatchesHandComputedProduct) {
    const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    const Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
    EXPECT_EQ(matmul(a, b), Tensor::from_rows({{19, 22}, {43, 50}}));
    EXPECT_EQ(matmul(a, Tensor::from_rows({{5}, {6}})), Tensor::from_rows({{17}, {39}}));
}

TEST(Matmul, IdentityIsNeutral) {
    Rng rng(3);
    const Tensor a = rand_normal(rng, {5, 7}, 0.0, 1.0);
    EXPECT_EQ(matmul(a, Tensor::identity(7)), a);
    EXPECT_EQ(matmul(Tensor::identity(5), a), a);
}

TEST(Matmul, AgreesWithExtendedPrecisionOracle) {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t m = 1 + rng.index(9), k = 1 + rng.index(9), n = 1 + rng.index(9);
        const Tensor a = rand_normal(rng, {m, k}, 0.0, 1.0);
        const Tensor b = rand_normal(rng, {k, n}, 0.0, 1.0);
        EXPECT_LT(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-12);
    }
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
    const Tensor a({2, 3});
    const Tensor b({4, 5});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
    }
}

TEST(Matmul, TransposeIdentity) {
    Rng rng(5);
    const Tensor a = rand_normal(rng, {3, 4}, 0.0, 1.0);
    const Tensor b = rand_normal(rng, {4, 2}, 0.0, 1.0);
    EXPECT_LT(max_abs_diff(transpose(matmul(a, b)), matmul(transpose(b), transpose(a))), 1e-14);
    EXPECT_EQ(transpose(transpose(a)), a);
}

TEST(Elementwise, UnaryOps) {
    const Tensor x = Tensor::vector({-1.0, 0.0, 2.0});
    const Tensor t = elementwise(UnaryOp::tanh, x);
    const Tensor s = elementwise(UnaryOp::sigmoid, x);
    const Tensor e = elementwise(UnaryOp::exp, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_DOUBLE_EQ(t[i], std::tanh(x[i]));
        EXPECT_NEAR(s[i], 1.0 / (1.0 + std::exp(-x[i])), 1e-15);
        EXPECT_DOUBLE_EQ(e[i], std::exp(x[i]));
    }
    EXPECT_DOUBLE_EQ(elementwise(UnaryOp::log, e)[2], 2.0);
}

TEST(Elementwise, TanhReferenceValue) {
    EXPECT_NEAR(elementwise(UnaryOp::tanh, Tensor::vector({1.0}))[0], 0.7615941559557649, 1e-16);
}

TEST(Elementwise, BinaryOpsAndScalarBroadcast) {
    const Tensor a = Tensor::vector({1, 2, 3});
    const Tensor b = Tensor::vector({4, 1, 2});
    EXPECT_EQ(elementwise(BinaryOp::add, a, b), Tensor::vector({5, 3, 5}));
    EXPECT_EQ(elementwise(BinaryOp::sub, a, b), Tensor::vector({-3, 1, 1}));
    EXPECT_EQ(elementwise(BinaryOp::mul, a, b), Tensor::vector({4, 2, 6}));
    EXPECT_EQ(elementwise(BinaryOp::div, a, b), Tensor::vector({0.25, 2, 1.5}));
    EXPECT_EQ(elementwise(BinaryOp::max, a, b), Tensor::vector({4, 2, 3}));
    EXPECT_EQ(elementwise(BinaryOp::mul, a, 2.0), Tensor::vector({2, 4, 6}));
    EXPECT_THROW(elementwise(BinaryOp::add, a, Tensor::vector({1, 2})), ShapeError);
}

TEST(Elementwise, CheckedDivisionByZeroThrows) {
    const Tensor a = Tensor::vector({1, 2});
    const Tensor z = Tensor::vector({1, 0});
    EXPECT_THROW(elementwise(BinaryOp::div, a, z), NumericError);
    EXPECT_THROW(elementwise(BinaryOp::div, a, 0.0), NumericError);
    const Tensor q = elementwise(BinaryOp::div, a, z, ArithmeticMode::ieee);
    EXPECT_TRUE(std::isinf(q[1]));
}

TEST(Elementwise, SigmoidStableAtExtremes) {
    EXPECT_EQ(sigmoid(-1000.0), 0.0);
    EXPECT_EQ(sigmoid(1000.0), 1.0);
    EXPECT_NEAR(log_sigmoid(-1000.0), -1000.0, 1e-12);
    EXPECT_NEAR(log_sigmoid(1000.0), 0.0, 1e-300);
    EXPECT_NEAR(log_sigmoid(0.3), std::log(1.0 / (1.0 + std::exp(-0.3))), 1e-15);
}

TEST(Reductions, Values) {
    const Tensor a = Tensor::vector({3, -4});
    EXPECT_EQ(sum(a), -1.0);
    EXPECT_EQ(mean(a), -0.5);
    EXPECT_EQ(max_abs(a), 4.0);
    EXPECT_EQ(l2_norm(a), 5.0);
    EXPECT_EQ(max_abs_diff(a, Tensor::vector({3, -3.5})), 0.5);
    EXPECT_FALSE(Tensor::vector({1, std::numeric_limits<double>::quiet_NaN()}).all_finite());
}
