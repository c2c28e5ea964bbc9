#include "oracles.hpp"

#include <deltaseq/corrstats.hpp>
#include <deltaseq/random.hpp>
#include <deltaseq/synth.hpp>

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace deltaseq;

namespace {

RealMatrix random_rows(std::size_t m, std::size_t n, std::uint64_t seed) {
    RealMatrix out(m, n);
    Rng rng = make_rng(seed, 0);
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) = normal(rng) + 0.3 * static_cast<double>(j % 3);
        }
    }
    return out;
}

std::string dump(const CorrelationSummary& s) {
    std::ostringstream out;
    out << nlohmann::json(s).dump();
    write_histogram_csv(out, s.histogram);
    return out.str();
}

} // namespace

TEST(Pearson, SelfCorrelationIsOne) {
    const std::vector<double> x{0.3, -1.2, 4.5, 2.2, 0.0};
    EXPECT_EQ(pearson(x, x), 1.0);
}

TEST(Pearson, ExactNegative) {
    EXPECT_EQ(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0);
}

TEST(Pearson, HandComputed) {
    EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}), 0.8, 1e-15);
}

TEST(Pearson, Errors) {
    EXPECT_THROW(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), DegenerateInputError);
    EXPECT_THROW(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), ValidationError);
}

TEST(Pearson, AffineInvariance) {
    const auto m = random_rows(2, 30, 11);
    std::vector<double> scaled(m.row(0).begin(), m.row(0).end());
    for (double& v : scaled) {
        v = 3.7 * v - 12.0;
    }
    EXPECT_NEAR(pearson(scaled, m.row(1)), pearson(m.row(0), m.row(1)), 1e-12);
    EXPECT_NEAR(pearson(m.row(0), m.row(1)), static_cast<double>(oracle::pearson(m.row(0), m.row(1))), 1e-12);
}

TEST(FisherZ, Values) {
    EXPECT_EQ(fisher_z(0.0), 0.0);
    EXPECT_NEAR(fisher_z(0.5), 0.5493061443340549, 1e-15);
    EXPECT_EQ(fisher_z(-0.5), -fisher_z(0.5));
    EXPECT_THROW(fisher_z(1.0), DomainError);
    EXPECT_THROW(fisher_z(-1.0), DomainError);
}

TEST(FisherZ, InverseIsTanh) {
    for (double r = -0.99; r < 0.99; r += 0.0137) {
        EXPECT_NEAR(std::tanh(fisher_z(r)), r, 1e-12);
    }
}

TEST(FisherZ, ReferenceSd) {
    EXPECT_DOUBLE_EQ(fisher_z_reference_sd(88), 1.0 / std::sqrt(85.0));
    EXPECT_NEAR(fisher_z_reference_sd(88), 0.108, 5e-4);
    EXPECT_THROW(fisher_z_reference_sd(3), ValidationError);
}

TEST(AllPairs, DuplicatedRows) {
    RealMatrix m(2, 5);
    for (std::size_t j = 0; j < 5; ++j) {
        m(0, j) = m(1, j) = static_cast<double>(j * j);
    }
    const auto s = all_pairs_summary(m, first_rows(2));
    EXPECT_EQ(s.pair_count, 1u);
    EXPECT_EQ(s.mean_r, 1.0);
    EXPECT_EQ(s.histogram.total(), 1u);
}

TEST(AllPairs, MatchesNaiveLoop) {
    const auto m = random_rows(50, 23, 5);
    for (std::size_t k : {3u, 17u, 50u}) {
        const auto rows = first_rows(k);
        const auto s = all_pairs_summary(m, rows, 20);
        std::vector<double> naive;
        for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t b = a + 1; b < k; ++b) {
                naive.push_back(static_cast<double>(oracle::pearson(m.row(a), m.row(b))));
            }
        }
        EXPECT_EQ(s.pair_count, naive.size());
        EXPECT_NEAR(s.mean_r, static_cast<double>(oracle::mean(naive)), 1e-12);
        EXPECT_NEAR(s.sd_r, std::sqrt(static_cast<double>(oracle::variance(naive))), 1e-12);
        EXPECT_EQ(s.histogram.total(), naive.size());

        const auto all = pairwise_correlations(m, rows);
        ASSERT_EQ(all.size(), naive.size());
        for (std::size_t p = 0; p < naive.size(); ++p) {
            EXPECT_NEAR(all[p], naive[p], 1e-12);
        }
    }
}

TEST(AllPairs, SubsetSelection) {
    const auto m = random_rows(10, 12, 8);
    const std::vector<std::size_t> rows{7, 2, 5};
    const auto s = all_pairs_summary(m, rows);
    const double expected = (pearson(m.row(7), m.row(2)) + pearson(m.row(7), m.row(5)) + pearson(m.row(2), m.row(5))) / 3;
    EXPECT_NEAR(s.mean_r, expected, 1e-12);
}

TEST(AllPairs, ThreadCountDoesNotChangeBytes) {
    const auto m = random_rows(150, 20, 6);
    const auto rows = first_rows(150);
    const auto serial = dump(all_pairs_summary(m, rows, 50, 1));
    EXPECT_EQ(dump(all_pairs_summary(m, rows, 50, 3)), serial);
    EXPECT_EQ(dump(all_pairs_summary(m, rows, 50, 8)), serial);
    const auto z1 = z_summary(m, rows, 30, 1);
    const auto z4 = z_summary(m, rows, 30, 4);
    EXPECT_EQ(nlohmann::json(z1).dump(), nlohmann::json(z4).dump());
    EXPECT_EQ(z1.histogram.counts(), z4.histogram.counts());
}

TEST(AllPairs, ConstantRowNamed) {
    const ExpressionMatrix m({"G1", "flat", "G3"}, {"A1", "A2", "A3", "A4"},
                             [] {
                                 RealMatrix v(3, 4);
                                 for (std::size_t j = 0; j < 4; ++j) {
                                     v(0, j) = static_cast<double>(j);
                                     v(1, j) = 2.0;
                                     v(2, j) = static_cast<double>(j * j);
                                 }
                                 return v;
                             }(),
                             true);
    try {
        all_pairs_summary(m, first_rows(3));
        FAIL() << "expected a degenerate-input error";
    } catch (const DegenerateInputError& e) {
        EXPECT_NE(std::string(e.what()).find("flat"), std::string::npos);
    }
}

TEST(AllPairs, NeedsTwoRows) {
    const auto m = random_rows(3, 6, 1);
    EXPECT_THROW(all_pairs_summary(m, first_rows(1)), ValidationError);
}

TEST(ZSummary, TheoreticalSdFromColumns) {
    const auto m = random_rows(4, 88, 2);
    EXPECT_DOUBLE_EQ(z_summary(m, first_rows(4)).theoretical_sd, 1.0 / std::sqrt(85.0));
}

TEST(ZSummary, DuplicatedRowsAreADomainError) {
    RealMatrix m(2, 5);
    for (std::size_t j = 0; j < 5; ++j) {
        m(0, j) = m(1, j) = static_cast<double>(j) * 0.5;
    }
    EXPECT_THROW(z_summary(m, first_rows(2)), DomainError);
    EXPECT_THROW(pairwise_fisher_z(m, first_rows(2)), DomainError);
}

TEST(ZSummary, IndependentRowsCalibrated) {
    const auto m = generate_null_matrix(400, 100, 0.0, 1.0, 21);
    const auto z = z_summary(m, first_rows(142), 50, 2); // 10011 pairs
    const double se = z.theoretical_sd / std::sqrt(2.0 * static_cast<double>(z.pair_count - 1));
    EXPECT_NEAR(z.sd_z, 1.0 / std::sqrt(97.0), 3.0 * se);
    EXPECT_EQ(z.histogram.total(), z.pair_count);
}

TEST(Histogram, EdgesAndMerge) {
    Histogram h(-1.0, 1.0, 4);
    h.add(-1.0);
    h.add(1.0);
    h.add(0.0);
    EXPECT_EQ(h.counts(), (std::vector<std::uint64_t>{1, 0, 1, 1}));
    Histogram g(-1.0, 1.0, 4);
    g.add(-0.75);
    h.merge(g);
    EXPECT_EQ(h.counts()[0], 2u);
    std::ostringstream out;
    write_histogram_csv(out, h);
    EXPECT_EQ(out.str().substr(0, 21), "bin_low,bin_high,coun");
}
