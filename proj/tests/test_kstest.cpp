#include "oracles.hpp"

#include <deltaseq/kstest.hpp>
#include <deltaseq/random.hpp>

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace deltaseq;

TEST(Edf, RightContinuousStep) {
    const EDF f({3.0, 1.0, 2.0, 2.0});
    EXPECT_EQ(f(0.5), 0.0);
    EXPECT_EQ(f(1.0), 0.25);
    EXPECT_EQ(f(1.999), 0.25);
    EXPECT_EQ(f(2.0), 0.75);
    EXPECT_EQ(f(3.0), 1.0);
    EXPECT_EQ(f(100.0), 1.0);
}

TEST(Edf, RejectsEmptyAndNonFinite) {
    EXPECT_THROW(EDF(std::vector<double>{}), ValidationError);
    EXPECT_THROW(EDF({1.0, std::nan("")}), ValidationError);
}

TEST(KsStatistic, IdenticalSamplesGiveZero) {
    const std::vector<double> a{1.0, 2.0, 3.0, 4.0};
    EXPECT_EQ(ks_statistic(a, a), 0.0);
    EXPECT_TRUE(ks_lattice_statistic(a, a).ties);
}

TEST(KsStatistic, DisjointSupportsGiveOne) {
    EXPECT_EQ(ks_statistic(std::vector<double>{1, 2, 3}, std::vector<double>{4, 5}), 1.0);
}

TEST(KsStatistic, InterleavedPairs) {
    EXPECT_EQ(ks_statistic(std::vector<double>{1, 3}, std::vector<double>{2, 4}), 0.5);
}

TEST(KsStatistic, Symmetric) {
    Rng rng = make_rng(3, 0);
    std::normal_distribution<double> normal;
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> a(7);
        std::vector<double> b(11);
        for (double& v : a) {
            v = normal(rng);
        }
        for (double& v : b) {
            v = std::round(normal(rng) * 2.0) / 2.0;
        }
        EXPECT_EQ(ks_statistic(a, b), ks_statistic(b, a));
    }
}

TEST(KsStatistic, MatchesBruteForceWithTies) {
    Rng rng = make_rng(4, 0);
    std::uniform_int_distribution<int> small(0, 5);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> a(1 + rep % 6);
        std::vector<double> b(1 + rep % 5);
        for (double& v : a) {
            v = small(rng);
        }
        for (double& v : b) {
            v = small(rng);
        }
        const auto expected = oracle::ks_distance(a, b);
        const auto lat = ks_lattice_statistic(a, b);
        EXPECT_EQ(oracle::Rational(lat.k, lat.n1 * lat.n2), expected);
    }
}

TEST(KsStatistic, EmptySampleRejected) {
    EXPECT_THROW(ks_statistic(std::vector<double>{}, std::vector<double>{1.0}), ValidationError);
}

TEST(KsExact, ZeroGivesOne) { EXPECT_EQ(ks_exact_pvalue(0.0, 5, 7), 1.0); }

TEST(KsExact, TwoByTwoFullSeparation) {
    const auto p = ks_exact_pvalue_exact(1.0, 2, 2);
    EXPECT_EQ(p.rational(), BigRational(1, 3));
}

TEST(KsExact, ThreeByThreeMatchesEnumeration) {
    const auto counts = oracle::ks_null_counts(3, 3);
    for (const auto& [d, c] : counts) {
        const auto k = static_cast<std::uint64_t>(boost::multiprecision::numerator(BigRational(d * 9)));
        EXPECT_EQ(ks_exact_survival(k, 3, 3).rational(), oracle::ks_survival(counts, d));
    }
}

TEST(KsExact, NonIncreasingInD) {
    double prev = 1.0;
    for (int k = 0; k <= 30; ++k) {
        const double p = ks_exact_pvalue(k / 30.0, 5, 6);
        EXPECT_LE(p, prev);
        prev = p;
    }
}

TEST(KsExact, LargeBalancedDesignIsExact) {
    // C(88, 44) overflows 64 bits; the count must still be exact.
    const auto p = ks_exact_survival(0, 44, 44);
    EXPECT_EQ(p.favourable, p.total);
    const auto tail = ks_exact_survival(44 * 44, 44, 44);
    EXPECT_EQ(tail.favourable, 2);
    EXPECT_EQ(tail.total, detail::binomial(88, 44));
}

TEST(KsExact, BigIntegerPathAgreesWithInt128) {
    const BigInt total = detail::binomial(20, 10);
    for (std::int64_t limit = 0; limit <= 100; limit += 10) {
        EXPECT_EQ(detail::count_paths_within<BigInt>(10, 10, limit),
                  detail::to_big(detail::count_paths_within<detail::uint128>(10, 10, limit)));
    }
    EXPECT_EQ(detail::count_paths_within<BigInt>(10, 10, 100), total);
}

TEST(KsExact, InvalidArguments) {
    EXPECT_THROW(ks_exact_pvalue(0.5, 0, 3), ValidationError);
    EXPECT_THROW(ks_exact_pvalue(1.5, 3, 3), ValidationError);
    EXPECT_THROW(ks_exact_pvalue(-0.1, 3, 3), ValidationError);
}

TEST(KsCdf, SingletonDesign) {
    const auto t = ks_exact_cdf(1, 1);
    ASSERT_EQ(t.entries.size(), 1u);
    EXPECT_EQ(t.entries[0].d, 1.0);
    EXPECT_EQ(t.entries[0].cdf, 1.0);
}

TEST(KsCdf, ConsistentWithPvalue) {
    for (auto [n1, n2] : {std::pair<std::size_t, std::size_t>{2, 2}, {3, 5}, {40, 40}}) {
        const auto t = ks_exact_cdf(n1, n2);
        double prev = 0.0;
        for (std::size_t i = 0; i < t.entries.size(); ++i) {
            const auto& e = t.entries[i];
            EXPECT_GE(e.cdf, prev);
            prev = e.cdf;
            EXPECT_EQ(e.survival, ks_exact_survival(e.k, n1, n2).value());
            // P(D >= d_i) = 1 - P(D <= d_{i-1})
            const double below = i == 0 ? 0.0 : t.entries[i - 1].cdf;
            EXPECT_NEAR(e.survival, 1.0 - below, 1e-12);
        }
        EXPECT_EQ(t.entries.back().cdf, 1.0);
    }
}

TEST(KsCdf, BudgetEnforced) {
    EXPECT_THROW(ks_exact_cdf(200, 200), ResourceError);
    EXPECT_NO_THROW(ks_exact_cdf(200, 200, 40'000));
}

TEST(KsCdf, CsvLayout) {
    std::ostringstream out;
    write_cdf_csv(out, ks_exact_cdf(1, 1));
    EXPECT_EQ(out.str(), "d,cdf\n1,1\n");
}

TEST(KolmogorovDistance, IdenticalIsZero) {
    const EDF f({1.0, 2.0, 2.5});
    EXPECT_EQ(kolmogorov_distance(f, f), 0.0);
}

TEST(KolmogorovDistance, SeparatedIsOne) {
    EXPECT_EQ(kolmogorov_distance(EDF({1.0, 2.0}), EDF({3.0, 4.0})), 1.0);
}

TEST(KolmogorovDistance, GapBeforeSecondJump) {
    EXPECT_EQ(kolmogorov_distance(EDF({1.0, 2.0}), EDF({1.5})), 0.5);
}

TEST(MeanOfEdfs, SingleEdfIsItself) {
    const std::vector<EDF> one{EDF({0.3, 0.1, 0.7})};
    const auto g = mean_of_edfs(one);
    EXPECT_EQ(kolmogorov_distance(one[0], g), 0.0);
}

TEST(MeanOfEdfs, AveragesPointwise) {
    const std::vector<EDF> two{EDF({0.0, 1.0}), EDF({2.0})};
    const auto g = mean_of_edfs(two);
    EXPECT_DOUBLE_EQ(g(0.0), 0.25);
    EXPECT_DOUBLE_EQ(g(1.0), 0.5);
    EXPECT_DOUBLE_EQ(g(2.0), 1.0);
    EXPECT_DOUBLE_EQ(g(-1.0), 0.0);
}

TEST(KsTest, CachedNullAgreesWithDirect) {
    const KsNullDistribution null(6, 6);
    const std::vector<double> a{0.1, 0.5, 0.9, 1.3, 2.0, 2.2};
    const std::vector<double> b{1.0, 1.1, 1.2, 3.0, 3.5, 4.0};
    const auto direct = ks_test(a, b);
    const auto cached = ks_test(a, b, null);
    EXPECT_EQ(direct.p_exact, cached.p_exact);
    EXPECT_EQ(direct.d, cached.d);
    EXPECT_THROW(ks_test(a, std::vector<double>{1.0}, null), ValidationError);
}

TEST(KsTest, LatticeInvariant) {
    const auto r = ks_test(std::vector<double>{1, 2, 3}, std::vector<double>{1.5, 2.5, 3.5, 4.5, 5.5});
    const double scaled = r.d * 15.0;
    EXPECT_NEAR(scaled, std::round(scaled), 1e-9);
    EXPECT_GE(r.p_exact, 0.0);
    EXPECT_LE(r.p_exact, 1.0);
}
