#include "karipap/bench.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace karipap;

TEST(SvdBaseline, DiagonalRankThreeIsExact) {
    DenseTensor w({4, 4});
    w[0] = 3, w[5] = 2, w[10] = 1;
    const auto [f, r] = svd_baseline(w, 3);
    EXPECT_LE(r.reconstruction_error, 1e-15);
    EXPECT_DOUBLE_EQ(r.compressed_params, 3.0 * 9.0);
}

TEST(SvdBaseline, ErrorEqualsSpectrumTail) {
    const DenseTensor w = oracle::random_tensor({16, 16}, 21);
    const auto sigma = oracle::power_iteration(oracle::gram(w), 16);
    double tail = 0, total = 0;
    for (std::size_t k = 0; k < 16; ++k) {
        total += sigma[k];
        if (k >= 4) tail += sigma[k];
    }
    const auto [f, r] = svd_baseline(w, 4);
    EXPECT_NEAR(r.reconstruction_error, std::sqrt(tail / total), 1e-6);
}

TEST(SvdBaseline, FullRankFlagsNoCompression) {
    const DenseTensor w = oracle::random_tensor({8, 8}, 2);
    EXPECT_TRUE(svd_baseline(w, 8).second.no_compression);
    EXPECT_FALSE(svd_baseline(w, 2).second.no_compression);
    EXPECT_THROW((void)svd_baseline(w, 0), ShapeMismatch);
}

TEST(QuantBaseline, SevenBillionParameterSizes) {
    EXPECT_NEAR(quantized_bytes(kSevenBModelParams, 8) / 1e9, 6.8, 0.068);
    EXPECT_NEAR(quantized_bytes(kSevenBModelParams, 4) / 1e9, 3.4, 0.034);
    EXPECT_THROW((void)quantized_bytes(1.0, 3), UnknownDtype);
}

TEST(QuantBaseline, ZeroMatrixIsExact) {
    const auto [q, r] = quant_baseline(DenseTensor({3, 3}), 4);
    EXPECT_EQ(q, DenseTensor({3, 3}));
    EXPECT_EQ(r.reconstruction_error, 0.0);
}

TEST(QuantBaseline, MoreBitsNoWorse) {
    for (unsigned seed = 0; seed < 5; ++seed) {
        const DenseTensor w = oracle::random_tensor({12, 10}, seed);
        EXPECT_LE(quant_baseline(w, 8).second.reconstruction_error, quant_baseline(w, 4).second.reconstruction_error);
        EXPECT_NEAR(quant_baseline(w, 8).second.compression_percent, 0.75, 1e-12);
    }
}

TEST(QuantBaseline, ValuesOnTheGrid) {
    const DenseTensor w = oracle::random_tensor({5, 5}, 9);
    const auto [q, r] = quant_baseline(w, 4);
    double amax = 0;
    for (double v : w.data()) amax = std::max(amax, std::abs(v));
    for (double v : q.data()) {
        const double level = v / (amax / 7.0);
        EXPECT_NEAR(level, std::round(level), 1e-9);
        EXPECT_LE(std::abs(level), 7.0 + 1e-9);
    }
}

TEST(Accounting, BytesPerParameter) {
    EXPECT_DOUBLE_EQ(table1_accounting(10, "f32"), 40);
    EXPECT_DOUBLE_EQ(table1_accounting(10, "f16"), 20);
    EXPECT_DOUBLE_EQ(table1_accounting(10, "i8"), 10);
    EXPECT_DOUBLE_EQ(table1_accounting(10, "i4"), 5);
    EXPECT_DOUBLE_EQ(table1_accounting(10, "mixed", 1.0), 20);
    EXPECT_DOUBLE_EQ(table1_accounting(10, "mixed", 0.0), 5);
    EXPECT_THROW((void)table1_accounting(10, "bf16"), UnknownDtype);
    EXPECT_THROW((void)table1_accounting(10, "mixed"), ConfigInvalid);
    EXPECT_THROW((void)table1_accounting(-1, "f32"), ConfigInvalid);
    for (Dtype d : {Dtype::kF32, Dtype::kF16, Dtype::kI8, Dtype::kI4, Dtype::kMixed})
        EXPECT_EQ(parse_dtype(dtype_name(d)), d);
}

TEST(Accounting, PublishedRows) {
    for (const Table1Row& row : table1_rows()) {
        const double gb = table1_accounting(row.params, row.dtype) / 1e9;
        if (row.label == "88%") continue;
        EXPECT_LE(std::abs(gb - row.published_gb) / row.published_gb, row.tolerance) << row.label;
    }
    EXPECT_NEAR(table1_accounting(kSevenBModelParams, Dtype::kF32) / 1e9, 26.96, 1e-9);
}

TEST(Accounting, MixedSplitHitsTarget) {
    const double f = solve_mixed_split(kCompressedParams, 2.1e9);
    EXPECT_NEAR(f, 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(table1_accounting(kCompressedParams, Dtype::kMixed, f), 2.1e9, 1e-3);
    EXPECT_THROW((void)solve_mixed_split(1.0, 10.0), ConfigInvalid);
}

TEST(Accounting, SuitePercentages) {
    const auto j = table1_suite();
    EXPECT_TRUE(j["pass"].get<bool>());
    EXPECT_NEAR(j["percentages"]["parameter_reduction"].get<double>(), 0.70, 1e-12);
    EXPECT_NEAR(j["percentages"]["memory_reduction_published_sizes"].get<double>(), 0.9225, 1e-4);
}

TEST(Entanglement, KroneckerCutsAreZero) {
    const GridSpec spec = make_grid_spec(4, 4, 1, 2);
    const DenseTensor a = oracle::random_tensor({2, 2}, 1), b = oracle::random_tensor({2, 2}, 2);
    DenseTensor w({4, 4});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) w[i * 4 + j] = a[(i / 2) * 2 + j / 2] * b[(i % 2) * 2 + j % 2];
    const auto profile = entanglement_profile(w, spec);
    ASSERT_EQ(profile.size(), 2u);
    EXPECT_EQ(profile[1].cut, "snake-1");
    EXPECT_NEAR(profile[1].entropy, 0.0, 1e-10);
    EXPECT_NEAR(profile[1].effective_rank, 1.0, 1e-9);
}

TEST(Entanglement, IdentityIsMaximal) {
    const auto profile = entanglement_profile(DenseTensor::identity(8), make_grid_spec(8, 8, 1, 1));
    EXPECT_EQ(profile.front().cut, "out|in");
    EXPECT_NEAR(profile.front().entropy, std::log(8.0), 1e-12);
}

TEST(Entanglement, MatchesJacobiOracle) {
    const DenseTensor w = oracle::random_tensor({8, 8}, 5);
    const auto lambda = oracle::jacobi_eigenvalues(oracle::gram(w));
    const double total = std::accumulate(lambda.begin(), lambda.end(), 0.0);
    double h = 0;
    for (double l : lambda)
        if (l > 0) h -= l / total * std::log(l / total);
    EXPECT_NEAR(entanglement_profile(w, make_grid_spec(8, 8, 1, 1)).front().entropy, h, 1e-10);
    EXPECT_EQ(spectrum_entropy(std::vector<double>{0.0, 0.0}), 0.0);
}

TEST(Reports, KaripapReportAccounting) {
    const DenseTensor w = oracle::random_tensor({16, 16}, 3);
    const GridSpec spec = make_grid_spec(16, 16, 2, 2);
    const CompressionReport r = karipap_report(w, spec, 2);
    EXPECT_DOUBLE_EQ(r.original_bytes, 16 * 16 * 4.0);
    EXPECT_DOUBLE_EQ(r.compressed_bytes, 4.0 * r.compressed_params);
    EXPECT_NEAR(r.compression_percent, 1.0 - r.compressed_bytes / r.original_bytes, 1e-15);
    EXPECT_GT(r.compression_percent, 0.0);
    EXPECT_LE(karipap_report(w, spec, 16).reconstruction_error, 1e-12);
}

TEST(Reports, SuitesAreDeterministicWithoutTimings) {
    EXPECT_EQ(baselines_suite(3, 16, 16, false).dump(), baselines_suite(3, 16, 16, false).dump());
    const auto trg = trg_oracle_suite(0, 1, kDefaultOracleBudget, false);
    EXPECT_TRUE(trg["pass"].get<bool>());
    EXPECT_FALSE(trg.contains("wall_time_seconds"));
    EXPECT_EQ(trg["cases"].size(), 25u);
}
