#pragma once

#include "datamodel.hpp"
#include "error.hpp"
#include "matrix.hpp"
#include "parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

namespace deltaseq {

/// Equal-width bins over [low, high]; the top edge belongs to the last bin.
class Histogram {
public:
    Histogram() = default;
    Histogram(double low, double high, std::size_t bins) : low_(low), high_(high), counts_(bins, 0) {
        if (bins == 0) {
            throw ValidationError("histogram needs at least one bin");
        }
        if (!(high > low)) {
            throw ValidationError("histogram range is empty");
        }
    }

    void add(double x) { ++counts_[bin_of(x)]; }

    std::size_t bin_of(double x) const {
        const double t = (x - low_) / (high_ - low_) * static_cast<double>(counts_.size());
        if (!(t > 0.0)) {
            return 0;
        }
        return std::min(static_cast<std::size_t>(t), counts_.size() - 1);
    }

    void merge(const Histogram& other) {
        for (std::size_t k = 0; k < counts_.size(); ++k) {
            counts_[k] += other.counts_[k];
        }
    }

    std::size_t bins() const noexcept { return counts_.size(); }
    double low() const noexcept { return low_; }
    double high() const noexcept { return high_; }
    double bin_low(std::size_t k) const {
        return low_ + (high_ - low_) * static_cast<double>(k) / static_cast<double>(counts_.size());
    }
    double bin_high(std::size_t k) const { return k + 1 == counts_.size() ? high_ : bin_low(k + 1); }
    const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }
    std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

private:
    double low_ = -1.0;
    double high_ = 1.0;
    std::vector<std::uint64_t> counts_;
};

struct CorrelationSummary {
    std::uint64_t pair_count = 0;
    double mean_r = 0.0;
    double sd_r = 0.0;
    Histogram histogram;
};

struct ZSummary {
    std::uint64_t pair_count = 0;
    double mean_z = 0.0;
    double sd_z = 0.0;
    double theoretical_sd = 0.0;
    Histogram histogram;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        s += a[k] * b[k];
    }
    return s;
}

inline bool is_constant(std::span<const double> x) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return *lo == *hi;
}

inline double clamp_unit(double r) { return std::clamp(r, -1.0, 1.0); }

} // namespace detail

/// Sample Pearson correlation. The normalisation is written so that
/// pearson(x, x) is exactly 1.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ValidationError("pearson: sequences differ in length");
    }
    if (x.size() < 2) {
        throw ValidationError("pearson: need at least 2 observations");
    }
    if (detail::is_constant(x) || detail::is_constant(y)) {
        throw DegenerateInputError("pearson: zero-variance input, correlation undefined");
    }
    const double mx = stats::mean(x);
    const double my = stats::mean(y);
    std::vector<double> cx(x.size());
    std::vector<double> cy(y.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        cx[k] = x[k] - mx;
        cy[k] = y[k] - my;
    }
    return detail::clamp_unit(detail::dot(cx, cy) / std::sqrt(detail::dot(cx, cx) * detail::dot(cy, cy)));
}

/// Fisher's variance-stabilising transform, atanh(r).
inline double fisher_z(double r) {
    if (!(std::abs(r) < 1.0)) {
        throw DomainError("fisher_z: |r| must be < 1");
    }
    return 0.5 * std::log((1.0 + r) / (1.0 - r));
}

/// Reference sd of Fisher z under independence for n observations.
inline double fisher_z_reference_sd(std::size_t n) {
    if (n <= 3) {
        throw ValidationError("Fisher z reference needs n > 3");
    }
    return 1.0 / std::sqrt(static_cast<double>(n - 3));
}

/// Two-sided p-value of H0: rho = 0 from the normal approximation z ~ N(0, 1/(n-3)).
inline double fisher_z_pvalue(double r, std::size_t n) {
    if (std::abs(r) >= 1.0) {
        return 0.0;
    }
    const double z = std::atanh(r) / fisher_z_reference_sd(n);
    return std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0);
}

/**
 * Selected rows, centred once, ready for all-pairs inner products.
 *
 * Correlation of rows a and b is dot(a, b) / sqrt(ss_a * ss_b), using the same
 * summation for the cross and squared terms so that duplicated rows give exactly 1.
 */
class CenteredRows {
public:
    template <RowMatrix M>
    CenteredRows(const M& m, std::span<const std::size_t> rows) : values_(rows.size(), m.cols()), sumsq_(rows.size()) {
        if (m.cols() < 2) {
            throw ValidationError("correlation needs at least 2 columns");
        }
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r] >= m.rows()) {
                throw ValidationError("row index " + std::to_string(rows[r]) + " out of range");
            }
            const auto src = m.row(rows[r]);
            if (detail::is_constant(src)) {
                throw DegenerateInputError("zero-variance row '" + row_label(m, rows[r]) +
                                           "': correlation undefined");
            }
            const double mu = stats::mean(src);
            auto dst = values_.row(r);
            for (std::size_t k = 0; k < src.size(); ++k) {
                dst[k] = src[k] - mu;
            }
            sumsq_[r] = detail::dot(dst, dst);
        }
        labels_.reserve(rows.size());
        for (std::size_t idx : rows) {
            labels_.push_back(row_label(m, idx));
        }
    }

    std::size_t size() const noexcept { return values_.rows(); }
    std::size_t cols() const noexcept { return values_.cols(); }
    const std::string& label(std::size_t r) const { return labels_[r]; }

    double correlation(std::size_t a, std::size_t b) const {
        return detail::clamp_unit(detail::dot(values_.row(a), values_.row(b)) / std::sqrt(sumsq_[a] * sumsq_[b]));
    }

private:
    RealMatrix values_;
    std::vector<double> sumsq_;
    std::vector<std::string> labels_;
};

/// Streaming count/mean/M2 with Chan's pairwise merge.
struct Moments {
    std::uint64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
    double max_abs = 0.0;

    void add(double x) {
        ++count;
        const double delta = x - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (x - mean);
        max_abs = std::max(max_abs, std::abs(x));
    }

    void merge(const Moments& o) {
        if (o.count == 0) {
            return;
        }
        if (count == 0) {
            *this = o;
            return;
        }
        const double n_a = static_cast<double>(count);
        const double n_b = static_cast<double>(o.count);
        const double n = n_a + n_b;
        const double delta = o.mean - mean;
        mean += delta * n_b / n;
        m2 += o.m2 + delta * delta * n_a * n_b / n;
        count += o.count;
        max_abs = std::max(max_abs, o.max_abs);
    }

    double sd() const { return count > 1 ? std::sqrt(m2 / static_cast<double>(count - 1)) : 0.0; }
};

namespace detail {

inline constexpr std::size_t pair_chunk_rows = 32;
inline constexpr std::size_t pair_block_cols = 128;

/**
 * Feeds every unordered pair (a < b) to a per-chunk accumulator and merges the
 * accumulators in chunk order. Chunk boundaries are fixed, so the result is
 * identical for every thread count.
 *
 * Acc must provide add(a, b, r) and merge(const Acc&).
 */
template <class Acc>
Acc reduce_pairs(const CenteredRows& rows, int threads, const Acc& proto) {
    const std::size_t n = rows.size();
    const std::size_t chunks = (n + pair_chunk_rows - 1) / pair_chunk_rows;
    std::vector<Acc> partial(chunks, proto);
    parallel_for(chunks, threads, [&](std::size_t c) {
        Acc& acc = partial[c];
        const std::size_t a_begin = c * pair_chunk_rows;
        const std::size_t a_end = std::min(n, a_begin + pair_chunk_rows);
        for (std::size_t b_begin = a_begin + 1; b_begin < n; b_begin += pair_block_cols) {
            const std::size_t b_end = std::min(n, b_begin + pair_block_cols);
            for (std::size_t a = a_begin; a < a_end; ++a) {
                for (std::size_t b = std::max(b_begin, a + 1); b < b_end; ++b) {
                    acc.add(a, b, rows.correlation(a, b));
                }
            }
        }
    });
    Acc total = proto;
    for (const Acc& acc : partial) {
        total.merge(acc);
    }
    return total;
}

struct CorrelationAcc {
    Moments moments;
    Histogram histogram;

    void add(std::size_t, std::size_t, double r) {
        moments.add(r);
        histogram.add(r);
    }
    void merge(const CorrelationAcc& o) {
        moments.merge(o.moments);
        histogram.merge(o.histogram);
    }
};

inline double checked_pair_z(const CenteredRows& rows, std::size_t a, std::size_t b, double r) {
    if (std::abs(r) >= 1.0) {
        throw DomainError("rows '" + rows.label(a) + "' and '" + rows.label(b) +
                          "' are perfectly correlated; Fisher z undefined");
    }
    return fisher_z(r);
}

struct ZMomentsAcc {
    const CenteredRows* rows = nullptr;
    Moments moments;

    void add(std::size_t a, std::size_t b, double r) { moments.add(checked_pair_z(*rows, a, b, r)); }
    void merge(const ZMomentsAcc& o) { moments.merge(o.moments); }
};

struct ZHistogramAcc {
    Histogram histogram;

    void add(std::size_t, std::size_t, double r) { histogram.add(fisher_z(r)); }
    void merge(const ZHistogramAcc& o) { histogram.merge(o.histogram); }
};

inline void check_subset(std::span<const std::size_t> rows) {
    if (rows.size() < 2) {
        throw ValidationError("need at least 2 rows to form a pair");
    }
}

} // namespace detail

inline constexpr std::size_t default_histogram_bins = 50;

/// Mean, sd and histogram of r over all unordered pairs of the selected rows.
template <RowMatrix M>
CorrelationSummary all_pairs_summary(const M& m, std::span<const std::size_t> rows,
                                     std::size_t bins = default_histogram_bins, int threads = 1) {
    detail::check_subset(rows);
    const CenteredRows centered(m, rows);
    detail::CorrelationAcc proto{Moments{}, Histogram(-1.0, 1.0, bins)};
    const auto acc = detail::reduce_pairs(centered, threads, proto);
    return CorrelationSummary{acc.moments.count, acc.moments.mean, acc.moments.sd(), acc.histogram};
}

/// Convenience overload over the first `count` rows.
inline std::vector<std::size_t> first_rows(std::size_t count) {
    std::vector<std::size_t> rows(count);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
}

/// Fisher z-scores of all pairwise correlations, histogrammed over the
/// symmetric range [-max|z|, max|z|].
template <RowMatrix M>
ZSummary z_summary(const M& m, std::span<const std::size_t> rows, std::size_t bins = default_histogram_bins,
                   int threads = 1) {
    detail::check_subset(rows);
    const double reference_sd = fisher_z_reference_sd(m.cols());
    const CenteredRows centered(m, rows);
    const auto moments = detail::reduce_pairs(centered, threads, detail::ZMomentsAcc{&centered, {}}).moments;
    const double half_width = moments.max_abs > 0.0 ? moments.max_abs : 1.0;
    const auto hist =
        detail::reduce_pairs(centered, threads, detail::ZHistogramAcc{Histogram(-half_width, half_width, bins)})
            .histogram;
    return ZSummary{moments.count, moments.mean, moments.sd(), reference_sd, hist};
}

/// Every pairwise correlation among the selected rows, pairs (a, b), a < b,
/// in lexicographic order.
template <RowMatrix M>
std::vector<double> pairwise_correlations(const M& m, std::span<const std::size_t> rows, int threads = 1) {
    detail::check_subset(rows);
    const CenteredRows centered(m, rows);
    const std::size_t n = centered.size();
    std::vector<double> out(n * (n - 1) / 2);
    parallel_for(n - 1, threads, [&](std::size_t a) {
        // pairs before row a: sum_{k<a} (n-1-k)
        std::size_t offset = a * (n - 1) - a * (a - 1) / 2;
        for (std::size_t b = a + 1; b < n; ++b) {
            out[offset++] = centered.correlation(a, b);
        }
    });
    return out;
}

/// Fisher z of every pairwise correlation, same order as pairwise_correlations.
template <RowMatrix M>
std::vector<double> pairwise_fisher_z(const M& m, std::span<const std::size_t> rows, int threads = 1) {
    auto values = pairwise_correlations(m, rows, threads);
    for (double& r : values) {
        if (std::abs(r) >= 1.0) {
            throw DomainError("perfectly correlated rows; Fisher z undefined");
        }
        r = fisher_z(r);
    }
    return values;
}

inline void write_histogram_csv(std::ostream& out, const Histogram& h) {
    out << "bin_low,bin_high,count\n";
    for (std::size_t k = 0; k < h.bins(); ++k) {
        out << detail::format_double(h.bin_low(k)) << ',' << detail::format_double(h.bin_high(k)) << ','
            << h.counts()[k] << '\n';
    }
}

inline void to_json(nlohmann::json& j, const CorrelationSummary& s) {
    j = nlohmann::json{{"pair_count", s.pair_count}, {"mean", s.mean_r}, {"sd", s.sd_r}, {"bins", s.histogram.bins()}};
}

inline void to_json(nlohmann::json& j, const ZSummary& s) {
    j = nlohmann::json{{"pair_count", s.pair_count},
                       {"mean", s.mean_z},
                       {"sd", s.sd_z},
                       {"theoretical_sd", s.theoretical_sd},
                       {"bins", s.histogram.bins()}};
}

} // namespace deltaseq
