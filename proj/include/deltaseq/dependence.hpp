#pragma once

#include "corrstats.hpp"
#include "datamodel.hpp"
#include "error.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace deltaseq {

/**
 * Outcome of the type-A necessary-condition test on one gene pair.
 *
 * The lower-variance gene is the driver x, the other the modulator y. Under
 * type A, y - x is independent of x, so corr(x, y - x) = 0 is the null;
 * failing to reject it classifies the pair as type A.
 */
struct TypeAResult {
    std::size_t driver = 0;
    std::size_t modulator = 1;
    double statistic = 0.0; // corr(driver, modulator - driver)
    double p_value = 1.0;
    bool is_type_a = true;
    /// y - x (or x) constant: the condition holds trivially, statistic reported as 0.
    bool degenerate = false;
};

namespace detail {

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ValidationError("significance level must lie in (0, 1)");
    }
}

/// True when x varies only by floating-point rounding relative to `scale`.
inline bool numerically_constant(std::span<const double> x, double scale) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return *hi - *lo <= 16.0 * std::numeric_limits<double>::epsilon() * scale;
}

inline double max_abs(std::span<const double> x) {
    double m = 0.0;
    for (double v : x) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

} // namespace detail

inline TypeAResult type_a_test(std::span<const double> x, std::span<const double> y, double alpha,
                               std::size_t x_index = 0, std::size_t y_index = 1) {
    detail::check_alpha(alpha);
    if (x.size() != y.size()) {
        throw ValidationError("type A test: rows differ in length");
    }
    if (x.size() < ExpressionMatrix::min_arrays) {
        throw ValidationError("type A test needs at least 4 arrays");
    }
    if (detail::is_constant(x) && detail::is_constant(y)) {
        throw DegenerateInputError("type A test: both rows are constant");
    }
    const double vx = stats::variance(x);
    const double vy = stats::variance(y);
    const bool x_drives = vx < vy || (vx == vy && x_index <= y_index);

    TypeAResult out;
    out.driver = x_drives ? x_index : y_index;
    out.modulator = x_drives ? y_index : x_index;
    const auto driver = x_drives ? x : y;
    const auto modulator = x_drives ? y : x;

    std::vector<double> increment(driver.size());
    for (std::size_t k = 0; k < driver.size(); ++k) {
        increment[k] = modulator[k] - driver[k];
    }
    const double scale = std::max(detail::max_abs(driver), detail::max_abs(modulator));
    if (detail::is_constant(driver) || detail::numerically_constant(increment, scale)) {
        out.degenerate = true;
        return out;
    }
    out.statistic = pearson(driver, increment);
    out.p_value = fisher_z_pvalue(out.statistic, driver.size());
    out.is_type_a = out.p_value > alpha;
    return out;
}

template <RowMatrix M>
TypeAResult type_a_test(const M& m, std::size_t gene_a, std::size_t gene_b, double alpha) {
    return type_a_test(m.row(gene_a), m.row(gene_b), alpha, gene_a, gene_b);
}

struct PairCensus {
    double fraction = 0.0; // share classified type A
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::vector<TypeAResult> results;
};

/// Type-A share among n_pairs distinct gene pairs drawn uniformly with the seeded generator.
template <RowMatrix M>
PairCensus type_a_census(const M& m, std::size_t n_pairs, double alpha, std::uint64_t seed, int threads = 1) {
    detail::check_alpha(alpha);
    if (n_pairs == 0) {
        throw ValidationError("pair census needs at least one pair");
    }
    Rng rng = make_rng(seed, 0);
    DistinctSubsetSampler<2> sampler(m.rows(), rng);
    if (n_pairs > sampler.total()) {
        throw ValidationError("requested " + std::to_string(n_pairs) + " pairs but only " +
                              std::to_string(sampler.total()) + " exist");
    }
    std::vector<std::array<std::size_t, 2>> pairs;
    pairs.reserve(n_pairs);
    for (std::size_t k = 0; k < n_pairs; ++k) {
        pairs.push_back(sampler.next());
    }
    PairCensus out;
    out.alpha = alpha;
    out.seed = seed;
    out.results.resize(n_pairs);
    parallel_for(n_pairs, threads,
                 [&](std::size_t k) { out.results[k] = type_a_test(m, pairs[k][0], pairs[k][1], alpha); });
    const auto hits = std::count_if(out.results.begin(), out.results.end(), [](const auto& r) { return r.is_type_a; });
    out.fraction = static_cast<double>(hits) / static_cast<double>(n_pairs);
    return out;
}

/// Sufficient-condition bound on rho(v, w) for a positive correlation of the
/// increments v - u and w - v, in the form 1 - 1/2 (1 - sv/sw)^2 (1 - sv/su)^2.
inline double positive_increment_threshold(double sigma_u, double sigma_v, double sigma_w) {
    for (double s : {sigma_u, sigma_v, sigma_w}) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ValidationError("standard deviations must be positive and finite");
        }
    }
    if (!(sigma_u <= sigma_v && sigma_v <= sigma_w)) {
        throw ValidationError("standard deviations must satisfy sigma_u <= sigma_v <= sigma_w");
    }
    const double a = 1.0 - sigma_v / sigma_w;
    const double b = 1.0 - sigma_v / sigma_u;
    return 1.0 - 0.5 * a * a * b * b;
}

/// Increments of a variance-ordered gene triple (u, v, w): z1 = v - u, z2 = w - v.
struct TripleStats {
    std::array<std::size_t, 3> ids{};
    std::vector<double> z1;
    std::vector<double> z2;
    double cov_z1_z2 = 0.0;
    double sigma_u = 0.0;
    double sigma_v = 0.0;
    double sigma_w = 0.0;
    std::optional<double> rho_uv;
    std::optional<double> rho_vw;
    std::optional<double> threshold;
    /// Two of the rows are identical.
    bool degenerate = false;
};

inline TripleStats triple_stats(std::span<const double> a, std::span<const double> b, std::span<const double> c,
                                std::array<std::size_t, 3> ids = {0, 1, 2}) {
    if (a.size() != b.size() || b.size() != c.size()) {
        throw ValidationError("triple: rows differ in length");
    }
    if (a.size() < 2) {
        throw ValidationError("triple: need at least 2 arrays");
    }
    std::array<std::span<const double>, 3> rows{a, b, c};
    std::array<double, 3> var{stats::variance(a), stats::variance(b), stats::variance(c)};
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) {
        return var[p] < var[q] || (var[p] == var[q] && ids[p] < ids[q]);
    });
    const auto u = rows[order[0]];
    const auto v = rows[order[1]];
    const auto w = rows[order[2]];

    TripleStats out;
    out.ids = {ids[order[0]], ids[order[1]], ids[order[2]]};
    out.z1.resize(u.size());
    out.z2.resize(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
        out.z1[k] = v[k] - u[k];
        out.z2[k] = w[k] - v[k];
    }
    out.cov_z1_z2 = stats::covariance(out.z1, out.z2);
    out.sigma_u = std::sqrt(var[order[0]]);
    out.sigma_v = std::sqrt(var[order[1]]);
    out.sigma_w = std::sqrt(var[order[2]]);
    const bool u_const = detail::is_constant(u);
    const bool v_const = detail::is_constant(v);
    const bool w_const = detail::is_constant(w);
    if (!u_const && !v_const) {
        out.rho_uv = pearson(u, v);
    }
    if (!v_const && !w_const) {
        out.rho_vw = pearson(v, w);
    }
    if (out.sigma_u > 0.0) {
        out.threshold = positive_increment_threshold(out.sigma_u, out.sigma_v, out.sigma_w);
    }
    const auto same = [](std::span<const double> p, std::span<const double> q) {
        return std::equal(p.begin(), p.end(), q.begin());
    };
    out.degenerate = same(u, v) || same(v, w) || same(u, w);
    return out;
}

template <RowMatrix M>
TripleStats triple_stats(const M& m, std::size_t a, std::size_t b, std::size_t c) {
    return triple_stats(m.row(a), m.row(b), m.row(c), {a, b, c});
}

enum class TripleMode { type_a_only, any };

struct TripleRecord {
    std::array<std::size_t, 3> ids{};
    double cov_z1_z2 = 0.0;
    double p_uv = 1.0;
    double p_vw = 1.0;
    bool degenerate = false;
    bool negative() const { return cov_z1_z2 < 0.0; }
};

struct TripleCensus {
    double fraction_negative = 0.0;
    TripleMode mode = TripleMode::any;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::size_t attempts = 0;
    std::vector<TripleRecord> records;
};

/// Candidate budget multiplier for the type-A-only census.
inline constexpr std::size_t triple_attempt_factor = 50;

/**
 * Share of variance-ordered triples with negative increment covariance.
 *
 * Triples are drawn uniformly without replacement. In type_a_only mode a
 * triple counts only if both adjacent pairs (u, v) and (v, w) pass the type-A
 * test; at most 50 candidates per requested triple are examined.
 */
template <RowMatrix M>
TripleCensus triple_census(const M& m, std::size_t n_triples, TripleMode mode, double alpha, std::uint64_t seed,
                           int threads = 1) {
    detail::check_alpha(alpha);
    if (n_triples == 0) {
        throw ValidationError("triple census needs at least one triple");
    }
    Rng rng = make_rng(seed, 0);
    DistinctSubsetSampler<3> sampler(m.rows(), rng);
    if (n_triples > sampler.total()) {
        throw ValidationError("requested " + std::to_string(n_triples) + " triples but only " +
                              std::to_string(sampler.total()) + " exist");
    }
    const std::size_t budget = mode == TripleMode::any ? n_triples : n_triples * triple_attempt_factor;

    TripleCensus out;
    out.mode = mode;
    out.alpha = alpha;
    out.seed = seed;
    while (out.records.size() < n_triples && out.attempts < budget && !sampler.exhausted()) {
        // candidates are drawn serially so the accepted set is thread-count independent
        const std::size_t batch = std::min<std::uint64_t>(
            {n_triples - out.records.size(), budget - out.attempts, sampler.total() - sampler.drawn()});
        std::vector<std::array<std::size_t, 3>> candidates;
        candidates.reserve(batch);
        for (std::size_t k = 0; k < batch; ++k) {
            candidates.push_back(sampler.next());
        }
        std::vector<TripleRecord> evaluated(batch);
        std::vector<char> keep(batch, 1);
        parallel_for(batch, threads, [&](std::size_t k) {
            const auto& t = candidates[k];
            const TripleStats s = triple_stats(m, t[0], t[1], t[2]);
            TripleRecord rec{s.ids, s.cov_z1_z2, 1.0, 1.0, s.degenerate};
            if (mode == TripleMode::type_a_only) {
                const auto uv = type_a_test(m, s.ids[0], s.ids[1], alpha);
                const auto vw = type_a_test(m, s.ids[1], s.ids[2], alpha);
                rec.p_uv = uv.p_value;
                rec.p_vw = vw.p_value;
                keep[k] = uv.is_type_a && vw.is_type_a;
            }
            evaluated[k] = rec;
        });
        out.attempts += batch;
        for (std::size_t k = 0; k < batch && out.records.size() < n_triples; ++k) {
            if (keep[k]) {
                out.records.push_back(evaluated[k]);
            }
        }
    }
    if (out.records.size() < n_triples) {
        throw ResourceError("triple census: found only " + std::to_string(out.records.size()) +
                            " qualifying triples of " + std::to_string(n_triples) + " after " +
                            std::to_string(out.attempts) + " candidates");
    }
    const auto neg = std::count_if(out.records.begin(), out.records.end(), [](const auto& r) { return r.negative(); });
    out.fraction_negative = static_cast<double>(neg) / static_cast<double>(n_triples);
    return out;
}

/**
 * Joint normal model for (u, a, b) with v = u + a and w = v + b:
 *
 *   | var_u    0       -cov_ab |
 *   | 0        var_a    cov_ab |
 *   | -cov_ab  cov_ab   var_b  |
 *
 * Under this covariance both (u, v) and (v, w) are type-A pairs and
 * Cov(v - u, w - v) = cov_ab.
 */
struct TripleCovarianceModel {
    double var_u = 1.0;
    double var_a = 1.0;
    double var_b = 1.0;
    double cov_ab = 0.0;

    using Matrix3 = std::array<std::array<double, 3>, 3>;

    /// Covariance of (u, a, b).
    Matrix3 covariance() const {
        return {{{var_u, 0.0, -cov_ab}, {0.0, var_a, cov_ab}, {-cov_ab, cov_ab, var_b}}};
    }

    /// Covariance of (u, v, w) = T Sigma T' with u = u, v = u + a, w = u + a + b.
    Matrix3 uvw_covariance() const {
        static constexpr Matrix3 t{{{1, 0, 0}, {1, 1, 0}, {1, 1, 1}}};
        const Matrix3 s = covariance();
        Matrix3 out{};
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < 3; ++p) {
                    for (std::size_t q = 0; q < 3; ++q) {
                        acc += t[i][p] * s[p][q] * t[j][q];
                    }
                }
                out[i][j] = acc;
            }
        }
        return out;
    }

    /// Cov(v - u, w - v) evaluated as a bilinear form on the (u, v, w) covariance.
    double increment_covariance() const {
        const Matrix3 c = uvw_covariance();
        static constexpr std::array<double, 3> d1{-1, 1, 0};
        static constexpr std::array<double, 3> d2{0, -1, 1};
        double acc = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                acc += d1[i] * c[i][j] * d2[j];
            }
        }
        return acc;
    }
};

/// True iff the model's covariance matrix is a valid (symmetric PSD) covariance
/// with nonzero variances, checked through all principal minors.
inline bool type_a_triple_consistency(const TripleCovarianceModel& model) {
    for (double v : {model.var_u, model.var_a, model.var_b}) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            return false;
        }
    }
    if (!std::isfinite(model.cov_ab)) {
        return false;
    }
    const auto s = model.covariance();
    const double scale = std::max({model.var_u, model.var_a, model.var_b, std::abs(model.cov_ab)});
    const double tol = 1e-12;
    const auto minor2 = [&](std::size_t i, std::size_t j) { return s[i][i] * s[j][j] - s[i][j] * s[j][i]; };
    if (minor2(0, 1) < -tol * scale * scale || minor2(0, 2) < -tol * scale * scale ||
        minor2(1, 2) < -tol * scale * scale) {
        return false;
    }
    const double det = s[0][0] * (s[1][1] * s[2][2] - s[1][2] * s[2][1]) -
                       s[0][1] * (s[1][0] * s[2][2] - s[1][2] * s[2][0]) +
                       s[0][2] * (s[1][0] * s[2][1] - s[1][1] * s[2][0]);
    return det >= -tol * scale * scale * scale;
}

struct ThresholdCounterexample {
    double sigma_u = 0.0;
    double sigma_v = 0.0;
    double sigma_w = 0.0;
    double rho_uv = 0.0;
    double rho_vw = 0.0;
    double rho_uw = 0.0;
    double threshold = 0.0;
    double increment_covariance = 0.0;
};

struct SoundnessReport {
    std::size_t checked = 0;
    std::vector<ThresholdCounterexample> counterexamples;
};

/**
 * Draws valid (u, v, w) covariance matrices with sigma_u <= sigma_v <= sigma_w
 * and rho(v, w) strictly above positive_increment_threshold, and records every
 * case whose population Cov(v - u, w - v) is not positive.
 */
inline SoundnessReport threshold_soundness_sweep(std::size_t cases, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0);
    std::uniform_real_distribution<double> log_sigma(std::log(0.1), std::log(10.0));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SoundnessReport report;
    while (report.checked < cases) {
        std::array<double, 3> s{std::exp(log_sigma(rng)), std::exp(log_sigma(rng)), std::exp(log_sigma(rng))};
        std::sort(s.begin(), s.end());
        const double thr = positive_increment_threshold(s[0], s[1], s[2]);
        if (thr >= 1.0) {
            continue; // no correlation can exceed it
        }
        const double lo = std::max(thr, -1.0);
        double rho_vw = lo + (1.0 - lo) * unit(rng);
        if (!(rho_vw > thr) || rho_vw >= 1.0) {
            continue;
        }
        const double rho_uv = -1.0 + 2.0 * unit(rng);
        const double half = std::sqrt((1.0 - rho_uv * rho_uv) * (1.0 - rho_vw * rho_vw));
        const double rho_uw = rho_uv * rho_vw - half + 2.0 * half * unit(rng);

        const double cov_vw = rho_vw * s[1] * s[2];
        const double cov_uv = rho_uv * s[0] * s[1];
        const double cov_uw = rho_uw * s[0] * s[2];
        const double inc = cov_vw - s[1] * s[1] - cov_uw + cov_uv;
        ++report.checked;
        if (!(inc > 0.0)) {
            report.counterexamples.push_back({s[0], s[1], s[2], rho_uv, rho_vw, rho_uw, thr, inc});
        }
    }
    return report;
}

template <RowMatrix M>
void write_pair_census_csv(std::ostream& out, const PairCensus& census, const M& m) {
    out << "id1,id2,statistic,p_value,flag\n";
    for (const auto& r : census.results) {
        out << row_label(m, r.driver) << ',' << row_label(m, r.modulator) << ','
            << detail::format_double(r.statistic) << ',' << detail::format_double(r.p_value) << ','
            << (r.is_type_a ? 1 : 0) << '\n';
    }
}

/// statistic = Cov(z1, z2); p_value = smaller adjacent type-A p-value (1 in any mode); flag = negative.
template <RowMatrix M>
void write_triple_census_csv(std::ostream& out, const TripleCensus& census, const M& m) {
    out << "id1,id2,id3,statistic,p_value,flag\n";
    for (const auto& r : census.records) {
        out << row_label(m, r.ids[0]) << ',' << row_label(m, r.ids[1]) << ',' << row_label(m, r.ids[2]) << ','
            << detail::format_double(r.cov_z1_z2) << ',' << detail::format_double(std::min(r.p_uv, r.p_vw)) << ','
            << (r.negative() ? 1 : 0) << '\n';
    }
}

inline void to_json(nlohmann::json& j, const PairCensus& c) {
    const auto hits = std::count_if(c.results.begin(), c.results.end(), [](const auto& r) { return r.is_type_a; });
    j = nlohmann::json{{"fraction", c.fraction},
                       {"pairs", c.results.size()},
                       {"type_a", hits},
                       {"alpha", c.alpha},
                       {"seed", c.seed}};
}

inline void to_json(nlohmann::json& j, const TripleCensus& c) {
    const auto neg = std::count_if(c.records.begin(), c.records.end(), [](const auto& r) { return r.negative(); });
    j = nlohmann::json{{"fraction", c.fraction_negative},
                       {"triples", c.records.size()},
                       {"negative", neg},
                       {"attempts", c.attempts},
                       {"mode", c.mode == TripleMode::any ? "any" : "type_a_only"},
                       {"alpha", c.alpha},
                       {"seed", c.seed}};
}

} // namespace deltaseq
