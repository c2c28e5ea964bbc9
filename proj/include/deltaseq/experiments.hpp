#pragma once

#include "corrstats.hpp"
#include "datamodel.hpp"
#include "error.hpp"
#include "kstest.hpp"
#include "mtp.hpp"
#include "ordering.hpp"
#include "parallel.hpp"
#include "random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace deltaseq {

/// Which signals a harness analyses: increments or even-position genes.
enum class Mode { delta, expression };

inline const char* to_string(Mode mode) { return mode == Mode::delta ? "delta" : "expression"; }

inline Mode parse_mode(const std::string& text) {
    if (text == "delta") {
        return Mode::delta;
    }
    if (text == "expression") {
        return Mode::expression;
    }
    throw ValidationError("unknown mode '" + text + "' (expected delta or expression)");
}

// Replicate r draws from stream r; set-up draws live far away from those.
inline constexpr std::uint64_t split_stream = 0xF000'0000'0000'0000ULL;
inline constexpr std::uint64_t target_stream = split_stream + 1;

namespace detail {

/// Rows analysed in `mode`, restricted to the given columns.
template <RowMatrix M>
RealMatrix mode_rows(const M& m, const GeneOrdering& ordering, Mode mode) {
    if (mode == Mode::delta) {
        return delta_values(m, ordering);
    }
    const auto genes = even_position_genes(ordering);
    return take_rows(m, genes);
}

inline std::vector<std::string> mode_row_ids(const ExpressionMatrix& m, const GeneOrdering& ordering, Mode mode) {
    std::vector<std::string> ids;
    ids.reserve(ordering.pair_count());
    for (std::size_t i = 0; i < ordering.pair_count(); ++i) {
        if (mode == Mode::delta) {
            ids.push_back("pair" + std::to_string(i + 1) + ":" + m.gene_ids()[ordering.lower(i)] + "-" +
                          m.gene_ids()[ordering.upper(i)]);
        } else {
            ids.push_back(m.gene_ids()[ordering.upper(i)]);
        }
    }
    return ids;
}

/// Row-wise two-sample KS of `a` against `b`; rows must match.
inline std::vector<KSResult> rowwise_ks(const RealMatrix& a, const RealMatrix& b, const KsNullDistribution& null,
                                        int threads) {
    std::vector<KSResult> out(a.rows());
    parallel_for(a.rows(), threads, [&](std::size_t i) { out[i] = ks_test(a.row(i), b.row(i), null); });
    return out;
}

inline std::pair<double, double> mean_and_sd(std::span<const double> x) {
    if (x.empty()) {
        return {0.0, 0.0};
    }
    const double mean = stats::mean(x);
    return {mean, x.size() < 2 ? 0.0 : stats::sd(x)};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Null-split calibration

struct NullSplitResult {
    Mode mode = Mode::delta;
    std::uint64_t seed = 0;
    std::vector<std::size_t> group1;
    std::vector<std::size_t> group2;
    std::vector<double> statistics; // one D per analysed row
    EDF pooled;
    KsCdfTable exact;
    double distance = 0.0;
};

/**
 * Two disjoint random groups from one matrix; the ordering comes from the full
 * matrix. Every analysed row is tested and the pooled statistics are compared
 * with the exact null CDF.
 */
inline NullSplitResult null_split_experiment(const ExpressionMatrix& m, std::size_t n1, std::size_t n2, Mode mode,
                                             std::uint64_t seed, int threads = 1,
                                             std::uint64_t cdf_budget = 1'000'000) {
    if (n1 == 0 || n2 == 0) {
        throw ValidationError("group sizes must be positive");
    }
    if (n1 + n2 > m.arrays()) {
        throw ValidationError("group sizes " + std::to_string(n1) + " + " + std::to_string(n2) + " exceed " +
                              std::to_string(m.arrays()) + " arrays");
    }
    Rng rng = make_rng(seed, split_stream);
    const auto drawn = sample_without_replacement(m.arrays(), n1 + n2, rng);
    std::vector<std::size_t> g1(drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(n1));
    std::vector<std::size_t> g2(drawn.begin() + static_cast<std::ptrdiff_t>(n1), drawn.end());

    const GeneOrdering ordering = variance_ordering(m);
    const RealMatrix rows = detail::mode_rows(m, ordering, mode);
    const RealMatrix a = take_columns(rows, g1);
    const RealMatrix b = take_columns(rows, g2);

    const KsNullDistribution null(n1, n2);
    const auto results = detail::rowwise_ks(a, b, null, threads);
    std::vector<double> stats;
    stats.reserve(results.size());
    for (const auto& r : results) {
        stats.push_back(r.d);
    }
    EDF pooled(stats);
    KsCdfTable exact = ks_exact_cdf(n1, n2, cdf_budget);
    const double distance = kolmogorov_distance(StepFunction::from_edf(pooled), exact.step_function());
    return NullSplitResult{mode,           seed, std::move(g1), std::move(g2), std::move(stats), std::move(pooled),
                           std::move(exact), distance};
}

// ---------------------------------------------------------------------------
// Delete-d jackknife

struct StabilityReport {
    std::size_t B = 0;
    std::size_t d = 0;
    std::size_t first_k = 0;
    std::uint64_t seed = 0;
    std::vector<double> distances;
    double mean = 0.0;
    double sd = 0.0;
};

inline constexpr std::uint64_t default_jackknife_budget = 10'000'000'000ULL;

/**
 * For each of B subsamples (d arrays deleted at random) the ordering is
 * recomputed, the first `first_k` increments are correlated pairwise and the
 * Fisher z values form an EDF. Each EDF is compared with the mean of all B.
 */
inline StabilityReport jackknife_stability(const ExpressionMatrix& m, std::size_t d, std::size_t B,
                                           std::size_t first_k, std::uint64_t seed, int threads = 1,
                                           std::uint64_t budget = default_jackknife_budget) {
    if (d >= m.arrays()) {
        throw ValidationError("cannot delete " + std::to_string(d) + " of " + std::to_string(m.arrays()) +
                              " arrays");
    }
    if (m.arrays() - d < ExpressionMatrix::min_arrays) {
        throw ValidationError("subsamples need at least 4 arrays");
    }
    if (B == 0) {
        throw ValidationError("B must be at least 1");
    }
    if (first_k < 2 || first_k > m.genes() / 2) {
        throw ValidationError("first_k must lie in [2, m/2] = [2, " + std::to_string(m.genes() / 2) + "]");
    }
    const long double work = static_cast<long double>(B) *
                             (static_cast<long double>(first_k) * (first_k - 1) / 2.0L) *
                             static_cast<long double>(m.arrays() - d);
    if (work > static_cast<long double>(budget)) {
        throw ResourceError("jackknife work " + std::to_string(static_cast<double>(work)) + " exceeds budget " +
                            std::to_string(budget));
    }

    const auto prefix = first_rows(first_k);
    std::vector<std::optional<EDF>> edfs(B);
    parallel_for(B, threads, [&](std::size_t s) {
        Rng rng = make_rng(seed, s);
        auto deleted = sample_without_replacement(m.arrays(), d, rng);
        std::vector<bool> drop(m.arrays(), false);
        for (std::size_t j : deleted) {
            drop[j] = true;
        }
        std::vector<std::size_t> keep;
        for (std::size_t j = 0; j < m.arrays(); ++j) {
            if (!drop[j]) {
                keep.push_back(j);
            }
        }
        const RealMatrix sub = take_columns(m, keep);
        const GeneOrdering ordering = variance_ordering(sub);
        const RealMatrix delta = delta_values(sub, ordering);
        edfs[s].emplace(pairwise_fisher_z(delta, prefix));
    });

    std::vector<EDF> all;
    all.reserve(B);
    for (auto& e : edfs) {
        all.push_back(std::move(*e));
    }
    const StepFunction g = mean_of_edfs(all);

    StabilityReport report{B, d, first_k, seed, {}, 0.0, 0.0};
    report.distances.resize(B);
    parallel_for(B, threads, [&](std::size_t s) { report.distances[s] = kolmogorov_distance(all[s], g); });
    std::tie(report.mean, report.sd) = detail::mean_and_sd(report.distances);
    return report;
}

// ---------------------------------------------------------------------------
// Effect injection

struct InjectionConfig {
    std::size_t size1 = 0; // 0: half of the arrays
    std::size_t size2 = 0; // 0: the remaining arrays
    std::size_t n_modified = 350;
    double effect_multiplier = 2.0;
    std::size_t n1 = 10;
    std::size_t n2 = 10;
    std::size_t replicates = 3000;
    double pfer = 9.0;
    std::uint64_t seed = 1;
};

struct ReplicateRecord {
    std::size_t fp = 0;
    std::size_t tp = 0;
    std::size_t rejected = 0;
    double fdr = 0.0;
};

struct ExperimentReport {
    Mode mode = Mode::delta;
    std::size_t hypotheses = 0;
    double threshold = 0.0;
    double fp_mean = 0.0;
    double fp_sd = 0.0;
    std::pair<std::size_t, std::size_t> fp_range{0, 0};
    double fdr_mean = 0.0;
    double fdr_sd = 0.0;
    std::vector<ReplicateRecord> per_replicate;
};

/// Everything needed to rerun an injection study exactly.
struct InjectionManifest {
    InjectionConfig config;
    Mode mode = Mode::delta;
    std::vector<std::size_t> subsample1; // array indices
    std::vector<std::size_t> subsample2;
    std::vector<std::size_t> targets; // analysed-row indices, ascending
    std::vector<std::string> target_ids;
    std::vector<double> effects; // one constant per target
};

struct InjectionResult {
    ExperimentReport report;
    InjectionManifest manifest;
};

inline InjectionConfig resolve(InjectionConfig config, const ExpressionMatrix& m) {
    const std::size_t n = m.arrays();
    if (config.size1 == 0 && config.size2 == 0) {
        config.size1 = n / 2;
        config.size2 = n - n / 2;
    } else if (config.size2 == 0 && config.size1 < n) {
        config.size2 = n - config.size1;
    }
    if (config.size1 + config.size2 > n) {
        throw ValidationError("split sizes exceed the number of arrays");
    }
    if (config.size1 < ExpressionMatrix::min_arrays) {
        throw ValidationError("subsample 1 needs at least 4 arrays to estimate the ordering");
    }
    if (config.n1 == 0 || config.n2 == 0 || config.n1 > config.size1 || config.n2 > config.size2) {
        throw ValidationError("per-replicate group sizes must satisfy 1 <= n1 <= size1 and 1 <= n2 <= size2");
    }
    if (config.n_modified > m.genes() / 2) {
        throw ValidationError("n_modified exceeds the " + std::to_string(m.genes() / 2) + " available pairs");
    }
    if (!std::isfinite(config.effect_multiplier) || config.effect_multiplier < 0.0) {
        throw ValidationError("effect multiplier must be a finite non-negative real");
    }
    if (config.replicates == 0) {
        throw ValidationError("replicates must be at least 1");
    }
    (void)ScreenConfig{config.pfer}.threshold(1);
    return config;
}

/**
 * Split the arrays once, fix the ordering and per-row sd on subsample 1, shift
 * the chosen rows of subsample 2 by multiplier * sd, then repeatedly draw
 * n1 + n2 arrays and screen every row with the exact KS test.
 */
inline InjectionResult effect_injection_experiment(const ExpressionMatrix& m, const InjectionConfig& requested,
                                                   Mode mode, int threads = 1) {
    const InjectionConfig config = resolve(requested, m);

    Rng split_rng = make_rng(config.seed, split_stream);
    const auto drawn = sample_without_replacement(m.arrays(), config.size1 + config.size2, split_rng);
    std::vector<std::size_t> sub1(drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(config.size1));
    std::vector<std::size_t> sub2(drawn.begin() + static_cast<std::ptrdiff_t>(config.size1), drawn.end());

    const RealMatrix s1 = take_columns(m, sub1);
    const RealMatrix s2 = take_columns(m, sub2);
    const GeneOrdering ordering = variance_ordering(s1);
    const RealMatrix r1 = detail::mode_rows(s1, ordering, mode);
    RealMatrix r2 = detail::mode_rows(s2, ordering, mode);

    Rng target_rng = make_rng(config.seed, target_stream);
    auto targets = sample_without_replacement(r1.rows(), config.n_modified, target_rng);
    std::sort(targets.begin(), targets.end());

    const auto ids = detail::mode_row_ids(m, ordering, mode);
    InjectionManifest manifest{config, mode, sub1, sub2, targets, {}, {}};
    std::vector<bool> truth(r1.rows(), false);
    for (std::size_t t : targets) {
        const double effect = config.effect_multiplier * stats::sd(r1.row(t));
        for (double& v : r2.row(t)) {
            v += effect;
        }
        truth[t] = effect != 0.0;
        manifest.target_ids.push_back(ids[t]);
        manifest.effects.push_back(effect);
    }

    const KsNullDistribution null(config.n1, config.n2);
    ExperimentReport report;
    report.mode = mode;
    report.hypotheses = r1.rows();
    report.threshold = ScreenConfig{config.pfer}.threshold(r1.rows());
    report.per_replicate.resize(config.replicates);
    parallel_for(config.replicates, threads, [&](std::size_t r) {
        Rng rng = make_rng(config.seed, r);
        const auto g1 = sample_without_replacement(config.size1, config.n1, rng);
        const auto g2 = sample_without_replacement(config.size2, config.n2, rng);
        std::vector<double> a(config.n1);
        std::vector<double> b(config.n2);
        std::vector<double> p(r1.rows());
        for (std::size_t i = 0; i < r1.rows(); ++i) {
            const auto x = r1.row(i);
            const auto y = r2.row(i);
            for (std::size_t k = 0; k < g1.size(); ++k) {
                a[k] = x[g1[k]];
            }
            for (std::size_t k = 0; k < g2.size(); ++k) {
                b[k] = y[g2[k]];
            }
            p[i] = ks_test(a, b, null).p_exact;
        }
        const auto screened = confusion_counts(extended_bonferroni(p, config.pfer), truth);
        report.per_replicate[r] = ReplicateRecord{screened.fp, screened.tp, screened.rejected.size(), screened.fdr};
    });

    std::vector<double> fp;
    std::vector<double> fdr;
    report.fp_range = {report.per_replicate.front().fp, report.per_replicate.front().fp};
    for (const auto& rec : report.per_replicate) {
        fp.push_back(static_cast<double>(rec.fp));
        fdr.push_back(rec.fdr);
        report.fp_range.first = std::min(report.fp_range.first, rec.fp);
        report.fp_range.second = std::max(report.fp_range.second, rec.fp);
    }
    std::tie(report.fp_mean, report.fp_sd) = detail::mean_and_sd(fp);
    std::tie(report.fdr_mean, report.fdr_sd) = detail::mean_and_sd(fdr);
    return InjectionResult{std::move(report), std::move(manifest)};
}

// ---------------------------------------------------------------------------
// Moving-mean consistency

struct ConsistencyTrajectory {
    std::size_t step = 0;
    std::vector<std::size_t> k_values;
    std::vector<double> sd_values;
};

/// sd across arrays of the per-array mean over the first k * step rows, k = 1..k_max.
template <RowMatrix M>
ConsistencyTrajectory moving_mean_consistency(const M& source, std::size_t step, std::size_t k_max) {
    if (step == 0 || k_max == 0) {
        throw ValidationError("step and k_max must be positive");
    }
    if (step * k_max > source.rows()) {
        throw ValidationError("k_max * step = " + std::to_string(step * k_max) + " exceeds the " +
                              std::to_string(source.rows()) + " available rows");
    }
    if (source.cols() < 2) {
        throw ValidationError("need at least 2 arrays for a standard deviation");
    }
    ConsistencyTrajectory out{step, {}, {}};
    std::vector<double> sums(source.cols(), 0.0);
    std::vector<double> means(source.cols());
    std::size_t used = 0;
    for (std::size_t k = 1; k <= k_max; ++k) {
        for (; used < k * step; ++used) {
            const auto row = source.row(used);
            for (std::size_t j = 0; j < sums.size(); ++j) {
                sums[j] += row[j];
            }
        }
        for (std::size_t j = 0; j < sums.size(); ++j) {
            means[j] = sums[j] / static_cast<double>(used);
        }
        out.k_values.push_back(k);
        out.sd_values.push_back(stats::sd(means));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-phenotype comparison

struct ExceedanceResult {
    Mode mode = Mode::delta;
    double alpha = 0.05;
    double fraction = 0.0;
    std::vector<std::string> row_ids;
    std::vector<KSResult> tests;
};

/// Rows of `b` reordered to follow the gene ids of `a`.
inline ExpressionMatrix align_genes(const ExpressionMatrix& a, const ExpressionMatrix& b) {
    if (a.genes() != b.genes()) {
        throw ValidationError("gene universes differ: " + std::to_string(a.genes()) + " vs " +
                              std::to_string(b.genes()) + " genes");
    }
    std::unordered_map<std::string, std::size_t> where;
    for (std::size_t i = 0; i < b.genes(); ++i) {
        where.emplace(b.gene_ids()[i], i);
    }
    std::vector<std::size_t> order;
    order.reserve(a.genes());
    for (const auto& id : a.gene_ids()) {
        const auto it = where.find(id);
        if (it == where.end()) {
            throw ValidationError("gene universes differ: '" + id + "' missing from the second matrix");
        }
        order.push_back(it->second);
    }
    return select_genes(b, order);
}

/**
 * Exact KS test of every row, A against B. Delta mode orders genes on the
 * pooled arrays; expression mode tests every gene.
 */
inline ExceedanceResult cross_phenotype_exceedance(const ExpressionMatrix& a, const ExpressionMatrix& b, Mode mode,
                                                   double alpha, int threads = 1) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ValidationError("alpha must lie in (0, 1)");
    }
    const ExpressionMatrix bb = align_genes(a, b);
    ExceedanceResult out{mode, alpha, 0.0, {}, {}};
    RealMatrix ra;
    RealMatrix rb;
    if (mode == Mode::delta) {
        const GeneOrdering ordering = variance_ordering(concat_columns(a, bb));
        ra = delta_values(a, ordering);
        rb = delta_values(bb, ordering);
        out.row_ids = detail::mode_row_ids(a, ordering, mode);
    } else {
        ra = a.values();
        rb = bb.values();
        out.row_ids = a.gene_ids();
    }
    const KsNullDistribution null(a.arrays(), bb.arrays());
    out.tests = detail::rowwise_ks(ra, rb, null, threads);
    const auto hits = std::count_if(out.tests.begin(), out.tests.end(),
                                    [&](const KSResult& r) { return r.p_exact <= alpha; });
    out.fraction = static_cast<double>(hits) / static_cast<double>(out.tests.size());
    return out;
}

// ---------------------------------------------------------------------------
// Reports

inline void to_json(nlohmann::json& j, const InjectionConfig& c) {
    j = nlohmann::json{{"size1", c.size1},        {"size2", c.size2},
                       {"n_modified", c.n_modified}, {"effect_multiplier", c.effect_multiplier},
                       {"n1", c.n1},              {"n2", c.n2},
                       {"replicates", c.replicates}, {"pfer", c.pfer},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, InjectionConfig& c) {
    const InjectionConfig d;
    c.size1 = j.value("size1", d.size1);
    c.size2 = j.value("size2", d.size2);
    c.n_modified = j.value("n_modified", d.n_modified);
    c.effect_multiplier = j.value("effect_multiplier", d.effect_multiplier);
    c.n1 = j.value("n1", d.n1);
    c.n2 = j.value("n2", d.n2);
    c.replicates = j.value("replicates", d.replicates);
    c.pfer = j.value("pfer", d.pfer);
    c.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const ExperimentReport& r) {
    j = nlohmann::json{{"mode", to_string(r.mode)},
                       {"hypotheses", r.hypotheses},
                       {"threshold", r.threshold},
                       {"replicates", r.per_replicate.size()},
                       {"fp_mean", r.fp_mean},
                       {"fp_sd", r.fp_sd},
                       {"fp_range", {r.fp_range.first, r.fp_range.second}},
                       {"fdr_mean", r.fdr_mean},
                       {"fdr_sd", r.fdr_sd}};
}

inline void to_json(nlohmann::json& j, const InjectionManifest& m) {
    j = nlohmann::json{{"config", m.config},         {"mode", to_string(m.mode)},
                       {"subsample1", m.subsample1}, {"subsample2", m.subsample2},
                       {"targets", m.targets},       {"target_ids", m.target_ids},
                       {"effects", m.effects}};
}

/// CSV `replicate,fp,tp,rejected,fdr`.
inline void write_replicates_csv(std::ostream& out, const ExperimentReport& r) {
    out << "replicate,fp,tp,rejected,fdr\n";
    for (std::size_t i = 0; i < r.per_replicate.size(); ++i) {
        const auto& rec = r.per_replicate[i];
        out << i << ',' << rec.fp << ',' << rec.tp << ',' << rec.rejected << ','
            << detail::format_double(rec.fdr) << '\n';
    }
}

inline void to_json(nlohmann::json& j, const StabilityReport& r) {
    j = nlohmann::json{{"B", r.B},   {"d", r.d},       {"first_k", r.first_k}, {"seed", r.seed},
                       {"mean", r.mean}, {"sd", r.sd}, {"distances", r.distances}};
}

inline void write_distances_csv(std::ostream& out, const StabilityReport& r) {
    out << "subsample,distance\n";
    for (std::size_t s = 0; s < r.distances.size(); ++s) {
        out << s << ',' << detail::format_double(r.distances[s]) << '\n';
    }
}

inline void to_json(nlohmann::json& j, const NullSplitResult& r) {
    j = nlohmann::json{{"mode", to_string(r.mode)},
                       {"seed", r.seed},
                       {"n1", r.group1.size()},
                       {"n2", r.group2.size()},
                       {"rows", r.statistics.size()},
                       {"distance", r.distance},
                       {"group1", r.group1},
                       {"group2", r.group2}};
}

/// CSV `d,pooled_edf,exact_cdf` over the achievable values of D.
inline void write_null_split_csv(std::ostream& out, const NullSplitResult& r) {
    out << "d,pooled_edf,exact_cdf\n";
    for (const auto& e : r.exact.entries) {
        out << detail::format_double(e.d) << ',' << detail::format_double(r.pooled(e.d)) << ','
            << detail::format_double(e.cdf) << '\n';
    }
}

inline void to_json(nlohmann::json& j, const ConsistencyTrajectory& t) {
    j = nlohmann::json{{"step", t.step}, {"k_values", t.k_values}, {"sd_values", t.sd_values}};
}

inline void write_trajectory_csv(std::ostream& out, const ConsistencyTrajectory& t) {
    out << "k,rows,sd\n";
    for (std::size_t i = 0; i < t.k_values.size(); ++i) {
        out << t.k_values[i] << ',' << t.k_values[i] * t.step << ',' << detail::format_double(t.sd_values[i])
            << '\n';
    }
}

inline void to_json(nlohmann::json& j, const ExceedanceResult& r) {
    j = nlohmann::json{{"mode", to_string(r.mode)},
                       {"alpha", r.alpha},
                       {"rows", r.tests.size()},
                       {"fraction", r.fraction}};
}

/// CSV `row_id,d,p,ties`.
inline void write_exceedance_csv(std::ostream& out, const ExceedanceResult& r) {
    out << "row_id,d,p,ties\n";
    for (std::size_t i = 0; i < r.tests.size(); ++i) {
        out << r.row_ids[i] << ',' << detail::format_double(r.tests[i].d) << ','
            << detail::format_double(r.tests[i].p_exact) << ',' << (r.tests[i].ties ? 1 : 0) << '\n';
    }
}

} // namespace deltaseq
