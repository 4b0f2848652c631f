#include "karipap/svd.hpp"
#include "karipap/tensor.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace karipap;

namespace {

DenseTensor iota(Shape shape) {
    DenseTensor t(std::move(shape));
    std::iota(t.data().begin(), t.data().end(), 1.0);
    return t;
}

std::vector<double> sorted_values(const DenseTensor& t) {
    std::vector<double> v(t.data().begin(), t.data().end());
    std::sort(v.begin(), v.end());
    return v;
}

} // namespace

TEST(Reshape, RelabelsRowMajorData) {
    const DenseTensor t = iota({2, 3});
    const DenseTensor r = reshape(t, {3, 2});
    EXPECT_EQ(r.shape(), (Shape{3, 2}));
    EXPECT_EQ(r.values(), t.values());
}

TEST(Reshape, SquareMatrixToOrderSix) {
    const DenseTensor t = oracle::random_tensor({216, 216}, 1);
    const DenseTensor r = reshape(t, {6, 6, 6, 6, 6, 6});
    EXPECT_EQ(r.order(), 6u);
    EXPECT_EQ(r.size(), 46656u);
    EXPECT_EQ(r.values(), t.values());
}

TEST(Reshape, RejectsCountChange) {
    EXPECT_THROW((void)reshape(iota({2, 3}), {4, 2}), ElementCountMismatch);
}

TEST(Reshape, ResultIsIndependentValue) {
    const DenseTensor t = iota({2, 3});
    DenseTensor r = reshape(t, {6});
    r[0] = 100.0;
    EXPECT_EQ(t[0], 1.0);
}

TEST(DenseTensorType, RejectsZeroExtentsAndCountMismatch) {
    EXPECT_THROW(DenseTensor(Shape{2, 0}), ElementCountMismatch);
    EXPECT_THROW(DenseTensor(Shape{2, 2}, {1.0, 2.0, 3.0}), ElementCountMismatch);
    const DenseTensor s = DenseTensor::scalar(3.5);
    EXPECT_EQ(s.order(), 0u);
    EXPECT_EQ(s.size(), 1u);
}

TEST(Permute, ShapeArithmetic) {
    EXPECT_EQ(permute(iota({2, 3, 4}), {2, 0, 1}).shape(), (Shape{4, 2, 3}));
}

TEST(Permute, IdentityOrderIsNoOp) {
    const DenseTensor t = oracle::random_tensor({2, 3, 4}, 2);
    EXPECT_EQ(permute(t, {0, 1, 2}), t);
}

TEST(Permute, MatchesIndexLoopsAndInverts) {
    const DenseTensor t = oracle::random_tensor({2, 3, 4}, 3);
    const AxisList order{1, 2, 0};
    const DenseTensor p = permute(t, order);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p.at({j, k, i}), t.at({i, j, k}));
    EXPECT_EQ(permute(p, inverse_permutation(order)), t);
}

TEST(Permute, RejectsInvalidOrders) {
    const DenseTensor t = iota({2, 3});
    EXPECT_THROW((void)permute(t, {0, 0}), InvalidPermutation);
    EXPECT_THROW((void)permute(t, {0}), InvalidPermutation);
    EXPECT_THROW((void)permute(t, {0, 2}), InvalidPermutation);
}

TEST(Matricize, ShapeArithmetic) {
    const DenseTensor t = iota({2, 3, 4});
    EXPECT_EQ(matricize(t, AxisList{0, 2}, AxisList{1}).shape(), (Shape{8, 3}));
    EXPECT_EQ(matricize(t, AxisList{0, 1, 2}, AxisList{}).shape(), (Shape{24, 1}));
}

TEST(Matricize, MatchesIndexLoopsAndInverts) {
    const DenseTensor t = oracle::random_tensor({2, 2, 2}, 4);
    const DenseTensor m = matricize(t, AxisList{2, 0}, AxisList{1});
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(m[(c * 2 + a) * 2 + b], t.at({a, b, c}));
    EXPECT_EQ(dematricize(m, t.shape(), AxisList{2, 0}, AxisList{1}), t);
}

TEST(Matricize, RejectsNonPartitions) {
    const DenseTensor t = iota({2, 3, 4});
    EXPECT_THROW((void)matricize(t, AxisList{0}, AxisList{1}), AxisPartitionError);
    EXPECT_THROW((void)matricize(t, AxisList{0, 1}, AxisList{1, 2}), AxisPartitionError);
    EXPECT_THROW((void)matricize(t, AxisList{0, 3}, AxisList{1, 2}), AxisPartitionError);
}

TEST(Contract, AllOnes) {
    const DenseTensor r = contract(DenseTensor::ones({2, 2}), AxisList{1}, DenseTensor::ones({2, 2}), AxisList{0});
    EXPECT_EQ(r, DenseTensor::filled({2, 2}, 2.0));
}

TEST(Contract, IdentityTimesVector) {
    const DenseTensor x = DenseTensor::vector({1.0, -2.0, 3.0, 0.5});
    EXPECT_EQ(contract(DenseTensor::identity(4), AxisList{1}, x, AxisList{0}), x);
}

TEST(Contract, MatchesNestedLoops) {
    const DenseTensor a = oracle::random_tensor({2, 3, 4}, 5);
    const DenseTensor b = oracle::random_tensor({4, 3}, 6);
    const DenseTensor got = contract(a, AxisList{1, 2}, b, AxisList{1, 0});
    const DenseTensor want = oracle::nested_contract(a, {1, 2}, b, {1, 0});
    EXPECT_EQ(got.shape(), want.shape());
    EXPECT_LE(max_abs_diff(got, want), 1e-12);
}

TEST(Contract, OuterProductAndFullContraction) {
    const DenseTensor a = oracle::random_tensor({2, 3}, 7);
    const DenseTensor b = oracle::random_tensor({3, 2}, 8);
    EXPECT_LE(max_abs_diff(contract(a, AxisList{}, b, AxisList{}), oracle::nested_contract(a, {}, b, {})), 1e-12);
    const DenseTensor full = contract(a, AxisList{0, 1}, b, AxisList{1, 0});
    EXPECT_EQ(full.order(), 0u);
    EXPECT_NEAR(full[0], oracle::nested_contract(a, {0, 1}, b, {1, 0})[0], 1e-12);
}

TEST(Contract, RejectsExtentMismatch) {
    EXPECT_THROW((void)contract(iota({2, 3}), AxisList{1}, iota({2, 3}), AxisList{0}), ExtentMismatch);
}

TEST(Contract, IsLinearInSecondArgument) {
    const DenseTensor a = oracle::random_tensor({3, 4, 2}, 9);
    const DenseTensor x = oracle::random_tensor({4, 5}, 10);
    const DenseTensor y = oracle::random_tensor({4, 5}, 11);
    const double lambda = -1.75;
    const DenseTensor lhs = contract(a, AxisList{1}, x + y * lambda, AxisList{0});
    const DenseTensor rhs = contract(a, AxisList{1}, x, AxisList{0}) + contract(a, AxisList{1}, y, AxisList{0}) * lambda;
    EXPECT_LE(relative_error(lhs, rhs), 1e-12);
}

TEST(TensorInvariants, ShapeOperationsPreserveElementsAndNorm) {
    for (unsigned seed = 0; seed < 10; ++seed) {
        const DenseTensor t = oracle::random_tensor({2, 3, 4, 2}, seed);
        const auto base = sorted_values(t);
        const DenseTensor p = permute(t, {3, 1, 0, 2});
        const DenseTensor m = matricize(t, AxisList{1, 3}, AxisList{2, 0});
        const DenseTensor r = reshape(t, {6, 8});
        for (const DenseTensor* u : {&p, &m, &r}) {
            EXPECT_EQ(sorted_values(*u), base);
            EXPECT_NEAR(u->frobenius_norm(), t.frobenius_norm(), 1e-14 * t.frobenius_norm());
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

DenseTensor diag(std::vector<double> d) {
    DenseTensor t({d.size(), d.size()});
    for (std::size_t i = 0; i < d.size(); ++i) t[i * d.size() + i] = d[i];
    return t;
}

} // namespace

TEST(SvdTruncate, DiagonalKeepsTopTwo) {
    const SvdResult r = svd_truncate(diag({3, 2, 1}), 2);
    ASSERT_EQ(r.rank(), 2u);
    EXPECT_NEAR(r.s[0], 3.0, 1e-14);
    EXPECT_NEAR(r.s[1], 2.0, 1e-14);
    EXPECT_NEAR(r.discarded_weight, 1.0 / 14.0, 1e-14);
    EXPECT_FALSE(r.degenerate_cut);
}

TEST(SvdTruncate, FullRankIsExact) {
    const DenseTensor m = oracle::random_tensor({6, 4}, 12);
    const SvdResult r = svd_truncate(m, 10);
    EXPECT_EQ(r.rank(), 4u);
    EXPECT_LE(relative_error(r.reconstruct(), m), 1e-12);
    EXPECT_EQ(r.discarded_weight, 0.0);
}

TEST(SvdTruncate, MatchesPowerIterationOracle) {
    const DenseTensor m = oracle::random_tensor({5, 4}, 13);
    const SvdResult r = svd_truncate(m, 2);
    const auto eig = oracle::power_iteration(oracle::gram(m), 2);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_LE(std::abs(r.s[k] - std::sqrt(eig[k])) / r.s[k], 1e-10);
}

TEST(SvdTruncate, SpectrumSortedAndNonNegative) {
    const SvdResult r = svd_truncate(oracle::random_tensor({7, 9}, 14), 5);
    EXPECT_TRUE(std::is_sorted(r.s.rbegin(), r.s.rend()));
    for (double s : r.spectrum) EXPECT_GE(s, 0.0);
    EXPECT_EQ(r.spectrum.size(), 7u);
}

TEST(SvdTruncate, EckartYoungError) {
    for (unsigned seed = 0; seed < 5; ++seed) {
        const DenseTensor m = oracle::random_tensor({8, 6}, 100 + seed);
        for (std::size_t k = 1; k < 6; ++k) {
            const SvdResult r = svd_truncate(m, k);
            double tail = 0.0;
            for (std::size_t j = k; j < r.spectrum.size(); ++j) tail += r.spectrum[j] * r.spectrum[j];
            const double err = (r.reconstruct() - m).frobenius_norm();
            EXPECT_LE(std::abs(err - std::sqrt(tail)) / std::sqrt(tail), 1e-10);
        }
    }
}

TEST(SvdTruncate, ToleranceDropsSmallValues) {
    const SvdResult r = svd_truncate(diag({10, 1, 1e-3}), 3, 1e-2);
    EXPECT_EQ(r.rank(), 2u);
}

TEST(SvdTruncate, SignConventionLargestEntryNonNegative) {
    for (unsigned seed = 0; seed < 5; ++seed) {
        const SvdResult r = svd_truncate(oracle::random_tensor({6, 5}, 200 + seed), 5);
        const auto u = r.u.as_matrix();
        for (Eigen::Index j = 0; j < u.cols(); ++j) {
            Eigen::Index arg = 0;
            u.col(j).cwiseAbs().maxCoeff(&arg);
            EXPECT_GE(u(arg, j), 0.0);
        }
    }
}

TEST(SvdTruncate, DeterministicBits) {
    const DenseTensor m = oracle::random_tensor({9, 7}, 15);
    const SvdResult a = svd_truncate(m, 4), b = svd_truncate(m, 4);
    EXPECT_EQ(a.u, b.u);
    EXPECT_EQ(a.v, b.v);
    EXPECT_EQ(a.s, b.s);
}

TEST(SvdTruncate, DegenerateClusterIsNotSplit) {
    const SvdResult r = svd_truncate(diag({3, 2, 2, 1}), 2);
    EXPECT_EQ(r.rank(), 1u);
    EXPECT_TRUE(r.degenerate_cut);
    // a cluster that cannot be moved below keeps everything and still flags
    const SvdResult all = svd_truncate(diag({2, 2, 2}), 1);
    EXPECT_EQ(all.rank(), 1u);
    EXPECT_TRUE(all.degenerate_cut);
}

TEST(SvdTruncate, ZeroMatrixKeepsOneVector) {
    const SvdResult r = svd_truncate(DenseTensor({3, 3}), 2);
    EXPECT_EQ(r.rank(), 1u);
    EXPECT_EQ(r.discarded_weight, 0.0);
    EXPECT_FALSE(r.degenerate_cut);
}

TEST(SvdTruncate, RejectsNonFiniteAndBadArguments) {
    DenseTensor m = oracle::random_tensor({3, 3}, 16);
    m[4] = std::nan("");
    EXPECT_THROW((void)svd_truncate(m, 2), NonFiniteInput);
    m[4] = INFINITY;
    EXPECT_THROW((void)svd_truncate(m, 2), NonFiniteInput);
    EXPECT_THROW((void)svd_truncate(oracle::random_tensor({2, 2, 2}, 1), 2), ShapeMismatch);
}
