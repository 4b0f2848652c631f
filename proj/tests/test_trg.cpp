#include "karipap/decompose.hpp"
#include "karipap/trg.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace karipap;

namespace {

double rel(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

// Every tensor an outer product of four random vectors. `closed_form`
// receives the product over bonds of the two facing vectors' dot products.
TrgNetwork product_network(std::size_t rows, std::size_t cols, std::size_t bond, unsigned seed,
                           double* closed_form = nullptr) {
    TrgNetwork net = constant_network(rows, cols, bond, 1.0);
    unsigned s = seed;
    std::vector<std::vector<DenseTensor>> legs;
    for (auto& t : net.tensors) {
        std::vector<DenseTensor> v;
        for (std::size_t a = 0; a < 4; ++a) v.push_back(oracle::random_tensor({t.extent(a)}, s++));
        legs.push_back(v);
        for (std::size_t i = 0; i < t.extent(0); ++i)
            for (std::size_t j = 0; j < t.extent(1); ++j)
                for (std::size_t k = 0; k < t.extent(2); ++k)
                    for (std::size_t l = 0; l < t.extent(3); ++l) t.at({i, j, k, l}) = v[0][i] * v[1][j] * v[2][k] * v[3][l];
    }
    if (closed_form) {
        auto dot = [](const DenseTensor& a, const DenseTensor& b) {
            double d = 0;
            for (std::size_t k = 0; k < a.size(); ++k) d += a[k] * b[k];
            return d;
        };
        double value = 1.0;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const auto& v = legs[r * cols + c];
                if (r == 0) value *= v[0][0];
                if (c == 0) value *= v[2][0];
                value *= r + 1 < rows ? dot(v[1], legs[(r + 1) * cols + c][0]) : v[1][0];
                value *= c + 1 < cols ? dot(v[3], legs[r * cols + c + 1][2]) : v[3][0];
            }
        }
        *closed_form = value;
    }
    return net;
}

std::vector<double> random_vector(std::size_t n, unsigned seed) {
    const DenseTensor t = oracle::random_tensor({n}, seed);
    return t.values();
}

} // namespace

TEST(BruteForce, AllOnesCounts) {
    EXPECT_EQ(brute_force_contract(constant_network(2, 2, 2, 1.0)), 16.0);
    EXPECT_EQ(brute_force_contract(constant_network(2, 2, 2, 1.0, true)), 256.0);
    EXPECT_EQ(brute_force_contract(constant_network(3, 3, 2, 1.0)), 4096.0);
}

TEST(BruteForce, BudgetIsEnforced) {
    EXPECT_THROW((void)brute_force_contract(random_network(4, 4, 3, 1), 1000), OracleBudgetExceeded);
}

TEST(TrgStep, AllOnesStaysExact) {
    const TrgNetwork open = trg_step(constant_network(2, 2, 2, 1.0), 4);
    EXPECT_EQ(open.rows * open.cols, 1u);
    EXPECT_NEAR(trg_contract(open, 4).value, 16.0, 1e-12);
    const TrgNetwork periodic = trg_step(constant_network(2, 2, 2, 1.0, true), 4);
    EXPECT_NEAR(trg_contract(periodic, 4).value, 256.0, 1e-10);
    EXPECT_EQ(periodic.steps, 1u);
}

TEST(TrgStep, ProductStateIsExactAtChiOne) {
    for (unsigned seed = 0; seed < 3; ++seed) {
        double exact = 0;
        const TrgNetwork net = product_network(4, 4, 3, 10 * seed, &exact);
        const TrgResult r = trg_contract(net, 1);
        EXPECT_LE(rel(r.value, exact), 1e-10);
        EXPECT_LE(r.accumulated_discarded_weight, 1e-20);
    }
}

TEST(TrgStep, OneStepThenExactMatchesBruteForce) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const TrgNetwork net = random_network(4, 4, 2, seed);
        const TrgNetwork coarse = trg_step(net, 16);
        EXPECT_EQ(coarse.rows, 2u);
        EXPECT_EQ(coarse.cols, 2u);
        EXPECT_TRUE(coarse.violations().empty());
        EXPECT_LE(coarse.max_bond(), 16u);
        EXPECT_LE(rel(brute_force_contract(coarse), brute_force_contract(net)), 1e-10);
    }
}

TEST(TrgStep, GridHalvesWithCeiling) {
    const TrgNetwork net = random_network(5, 3, 2, 4);
    const TrgNetwork c1 = trg_step(net, 8);
    EXPECT_EQ(c1.rows, 3u);
    EXPECT_EQ(c1.cols, 2u);
    const TrgNetwork c2 = trg_step(c1, 8);
    EXPECT_EQ(c2.rows, 2u);
    EXPECT_EQ(c2.cols, 1u);
    EXPECT_GE(c2.accumulated_discarded_weight, c1.accumulated_discarded_weight);
}

TEST(TrgContract, SingleSiteNeedsNoSteps) {
    TrgNetwork one = constant_network(1, 1, 1, 3.5);
    const TrgResult r = trg_contract(one, 4);
    EXPECT_EQ(r.value, 3.5);
    EXPECT_EQ(r.steps, 0u);
    // periodic 1x1: trace over both loops
    TrgNetwork loop{1, 1, {oracle::random_tensor({2, 2, 3, 3}, 1)}, true};
    double tr = 0.0;
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 3; ++b) tr += loop.tensors[0].at({a, a, b, b});
    EXPECT_NEAR(trg_contract(loop, 4).value, tr, 1e-14);
}

TEST(TrgContract, RandomFourByFourMatchesBruteForce) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const TrgNetwork net = random_network(4, 4, 2, 100 + seed);
        const double exact = brute_force_contract(net);
        const TrgResult r16 = trg_contract(net, 16);
        EXPECT_LE(rel(r16.value, exact), 1e-8);
        const TrgResult r2 = trg_contract(net, 2);
        EXPECT_GE(rel(r2.value, exact), rel(r16.value, exact));
        EXPECT_GT(r2.accumulated_discarded_weight, 0.0);
    }
}

TEST(TrgContract, ExactnessThresholdOnEveryFixture) {
    std::uint64_t seed = 300;
    for (auto [r, c] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 2}, {4, 4}, {3, 2}, {2, 4}}) {
        for (int k = 0; k < 3; ++k) {
            const TrgNetwork net = random_network(r, c, 2, seed++);
            EXPECT_LE(rel(trg_contract(net, 64).value, brute_force_contract(net)), 1e-10);
        }
    }
    for (int k = 0; k < 3; ++k) {
        const TrgNetwork net = random_network(2, 2, 2, seed++, true);
        EXPECT_LE(rel(trg_contract(net, 64).value, brute_force_contract(net)), 1e-10);
    }
}

TEST(TrgContract, FidelityNonIncreasingInChi) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const TrgNetwork net = random_network(4, 4, 2, 500 + seed);
        const double exact = brute_force_contract(net);
        double prev = INFINITY;
        for (std::size_t chi : {4, 8, 16, 32}) {
            const double e = rel(trg_contract(net, chi).value, exact);
            EXPECT_LE(e, prev + 1e-12) << "chi " << chi;
            prev = e;
        }
    }
}

TEST(TrgContract, IntermediateSizeBound) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (std::size_t chi : {1, 2, 4, 8, 16}) {
            const TrgResult r = trg_contract(random_network(4, 4, 2, seed), chi);
            EXPECT_LE(r.max_bound_ratio, kIntermediateBoundConstant);
            const double chi_eff = static_cast<double>(std::max<std::size_t>(chi, 2));
            EXPECT_LE(static_cast<double>(r.max_intermediate), kIntermediateBoundConstant * std::pow(chi_eff, 6));
        }
    }
}

TEST(TrgContract, ThreadCountDoesNotChangeBits) {
    const TrgNetwork net = random_network(6, 6, 2, 77);
    const TrgResult one = trg_contract(net, 6, 64, 1);
    const TrgResult four = trg_contract(net, 6, 64, 4);
    EXPECT_EQ(one.value, four.value);
    EXPECT_EQ(one.accumulated_discarded_weight, four.accumulated_discarded_weight);
}

TEST(TrgContract, StepLimitRaises) {
    EXPECT_THROW((void)trg_contract(random_network(4, 4, 2, 1), 4, 1), NonConvergence);
}

TEST(TrgContract, RejectsInvalidNetwork) {
    TrgNetwork net = random_network(2, 2, 2, 1);
    net.tensors[0] = oracle::random_tensor({1, 2, 1, 3}, 1);
    EXPECT_THROW((void)trg_contract(net, 4), ShapeMismatch);
}

// ---------------------------------------------------------------------------

TEST(ContractForward, ZeroInputGivesZero) {
    const GridSpec spec = make_grid_spec(12, 10, 2, 2);
    const auto y = contract_forward(random_lattice(2, 2, spec, 2, 1), std::vector<double>(10, 0.0));
    ASSERT_EQ(y.size(), 12u);
    for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(ContractForward, FullChiDecompositionMatchesDense) {
    for (auto [m, n, r, c] : std::vector<std::array<std::size_t, 4>>{{16, 16, 2, 2}, {24, 20, 2, 3}, {30, 7, 3, 1}}) {
        const DenseTensor w = oracle::random_tensor({m, n}, unsigned(m + n));
        const auto [l, rep] = decompose_weight(w, make_grid_spec(m, n, r, c), 1000);
        for (unsigned k = 0; k < 10; ++k) {
            const auto x = random_vector(n, 40 + k);
            const auto y = contract_forward(l, x);
            const Eigen::VectorXd ref = w.as_matrix() * Eigen::Map<const Eigen::VectorXd>(x.data(), n);
            EXPECT_LE((Eigen::Map<const Eigen::VectorXd>(y.data(), m) - ref).norm() / ref.norm(), 1e-8);
        }
    }
}

TEST(ContractForward, AgreesWithOracleMatrix) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const GridSpec spec = make_grid_spec(20, 14, 2, 3);
        const PepsLattice l = random_lattice(2, 3, spec, 2, seed);
        const DenseTensor w = crop(exact_contract_to_dense(l), 20, 14);
        const auto x = random_vector(14, unsigned(seed));
        const auto y = contract_forward(l, x);
        const Eigen::VectorXd ref = w.as_matrix() * Eigen::Map<const Eigen::VectorXd>(x.data(), 14);
        EXPECT_LE((Eigen::Map<const Eigen::VectorXd>(y.data(), 20) - ref).norm() / ref.norm(), 1e-9);
    }
}

TEST(ContractForward, Linear) {
    const GridSpec spec = make_grid_spec(16, 16, 2, 2);
    const PepsLattice l = random_lattice(2, 2, spec, 3, 8);
    const auto x1 = random_vector(16, 1), x2 = random_vector(16, 2);
    const double a = 0.75, b = -2.0;
    std::vector<double> mix(16);
    for (std::size_t i = 0; i < 16; ++i) mix[i] = a * x1[i] + b * x2[i];
    const auto y1 = contract_forward(l, x1), y2 = contract_forward(l, x2), ym = contract_forward(l, mix);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
        diff += std::pow(ym[i] - (a * y1[i] + b * y2[i]), 2);
        norm += ym[i] * ym[i];
    }
    EXPECT_LE(std::sqrt(diff / norm), 1e-10);
}

TEST(ContractForward, BoundarySweepBeyondBudget) {
    const GridSpec spec = make_grid_spec(64, 64, 3, 3);
    const PepsLattice l = random_lattice(3, 3, spec, 2, 9);
    const auto x = random_vector(64, 3);
    const auto exact = contract_forward(l, x);
    // a tiny budget forces frontier truncation; a large chi keeps it exact
    const auto wide = contract_forward(l, x, 1000, 1);
    const auto narrow = contract_forward(l, x, 1, 1);
    double d_wide = 0.0, d_narrow = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
        d_wide += std::pow(wide[i] - exact[i], 2);
        d_narrow += std::pow(narrow[i] - exact[i], 2);
        norm += exact[i] * exact[i];
    }
    EXPECT_LE(std::sqrt(d_wide / norm), 1e-10);
    EXPECT_GT(std::sqrt(d_narrow / norm), 1e-6);
}

TEST(ContractForward, RejectsWrongLength) {
    const GridSpec spec = make_grid_spec(16, 16, 2, 2);
    EXPECT_THROW((void)contract_forward(random_lattice(2, 2, spec, 2, 1), std::vector<double>(15, 1.0)), ShapeMismatch);
}
