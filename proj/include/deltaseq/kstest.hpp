#pragma once

#include "datamodel.hpp"
#include "error.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <span>
#include <vector>

namespace deltaseq {

using BigInt = boost::multiprecision::cpp_int;
using BigRational = boost::multiprecision::cpp_rational;

/// Empirical distribution function F(t) = #{x <= t} / size.
class EDF {
public:
    explicit EDF(std::vector<double> sample) : sorted_(std::move(sample)) {
        if (sorted_.empty()) {
            throw ValidationError("EDF of an empty sample");
        }
        for (double v : sorted_) {
            if (!std::isfinite(v)) {
                throw ValidationError("EDF sample contains a non-finite value");
            }
        }
        std::sort(sorted_.begin(), sorted_.end());
    }

    double operator()(double t) const {
        const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), t);
        return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
    }

    std::size_t size() const noexcept { return sorted_.size(); }
    std::span<const double> sorted_sample() const noexcept { return sorted_; }

private:
    std::vector<double> sorted_;
};

/**
 * Right-continuous non-decreasing step function, 0 before its first jump.
 * points are strictly increasing; values[k] is the value on [points[k], points[k+1]).
 */
class StepFunction {
public:
    StepFunction(std::vector<double> points, std::vector<double> values)
        : points_(std::move(points)), values_(std::move(values)) {
        if (points_.size() != values_.size()) {
            throw ValidationError("step function: points and values differ in length");
        }
        for (std::size_t k = 1; k < points_.size(); ++k) {
            if (!(points_[k] > points_[k - 1])) {
                throw ValidationError("step function: jump points must be strictly increasing");
            }
        }
    }

    static StepFunction from_edf(const EDF& f) {
        const auto x = f.sorted_sample();
        std::vector<double> points;
        std::vector<double> values;
        const double size = static_cast<double>(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) {
            if (k + 1 < x.size() && x[k + 1] == x[k]) {
                continue;
            }
            points.push_back(x[k]);
            values.push_back(static_cast<double>(k + 1) / size);
        }
        return StepFunction(std::move(points), std::move(values));
    }

    double operator()(double t) const {
        const auto it = std::upper_bound(points_.begin(), points_.end(), t);
        return it == points_.begin() ? 0.0 : values_[static_cast<std::size_t>(it - points_.begin()) - 1];
    }

    std::span<const double> points() const noexcept { return points_; }
    std::span<const double> values() const noexcept { return values_; }

private:
    std::vector<double> points_;
    std::vector<double> values_;
};

/**
 * Arithmetic mean of EDFs as an exact step function over the union of their
 * jump points. EDFs of equal size are summed as integer counts first, so the
 * mean of a single EDF reproduces it bit for bit.
 */
inline StepFunction mean_of_edfs(std::span<const EDF> edfs) {
    if (edfs.empty()) {
        throw ValidationError("mean of zero EDFs");
    }
    // group jump counts by sample size
    std::map<std::size_t, std::vector<double>> by_size;
    for (const auto& f : edfs) {
        auto& pool = by_size[f.size()];
        pool.insert(pool.end(), f.sorted_sample().begin(), f.sorted_sample().end());
    }
    struct Group {
        double size;
        std::vector<double> pool;
        std::size_t cursor = 0;
        std::uint64_t cum = 0;
    };
    std::vector<Group> groups;
    std::vector<double> all;
    for (auto& [size, pool] : by_size) {
        std::sort(pool.begin(), pool.end());
        all.insert(all.end(), pool.begin(), pool.end());
        groups.push_back(Group{static_cast<double>(size), std::move(pool)});
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    const double b = static_cast<double>(edfs.size());
    std::vector<double> values;
    values.reserve(all.size());
    for (double t : all) {
        double acc = 0.0;
        for (auto& g : groups) {
            while (g.cursor < g.pool.size() && g.pool[g.cursor] <= t) {
                ++g.cursor;
                ++g.cum;
            }
            acc += static_cast<double>(g.cum) / g.size;
        }
        values.push_back(acc / b);
    }
    return StepFunction(std::move(all), std::move(values));
}

/// Unnormalised sup |F - G| over the real line; exact for step functions.
inline double kolmogorov_distance(const StepFunction& f, const StepFunction& g) {
    const auto fp = f.points();
    const auto gp = g.points();
    const auto fv = f.values();
    const auto gv = g.values();
    std::size_t a = 0;
    std::size_t b = 0;
    double fcur = 0.0;
    double gcur = 0.0;
    double best = 0.0;
    // Both functions are constant between consecutive union points, so checking
    // the value right after each jump covers every left limit too.
    while (a < fp.size() || b < gp.size()) {
        double t;
        if (b >= gp.size() || (a < fp.size() && fp[a] < gp[b])) {
            t = fp[a];
        } else {
            t = gp[b];
        }
        if (a < fp.size() && fp[a] == t) {
            fcur = fv[a++];
        }
        if (b < gp.size() && gp[b] == t) {
            gcur = gv[b++];
        }
        best = std::max(best, std::abs(fcur - gcur));
    }
    return best;
}

inline double kolmogorov_distance(const EDF& f, const EDF& g) {
    return kolmogorov_distance(StepFunction::from_edf(f), StepFunction::from_edf(g));
}

inline double kolmogorov_distance(const EDF& f, const StepFunction& g) {
    return kolmogorov_distance(StepFunction::from_edf(f), g);
}

inline double kolmogorov_distance(const StepFunction& f, const EDF& g) {
    return kolmogorov_distance(f, StepFunction::from_edf(g));
}

/**
 * Two-sample KS statistic on the integer lattice: D = k / (n1 * n2) with
 * k = max |i * n2 - j * n1| over the merged EDF walk.
 */
struct KsLatticeStatistic {
    std::uint64_t k = 0;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
    /// A value occurs in both samples.
    bool ties = false;

    double d() const { return static_cast<double>(k) / (static_cast<double>(n1) * static_cast<double>(n2)); }
};

namespace detail {

__extension__ using uint128 = unsigned __int128;

inline void check_sample(std::span<const double> s, const char* which) {
    if (s.empty()) {
        throw ValidationError(std::string("KS: ") + which + " is empty");
    }
    for (double v : s) {
        if (std::isnan(v)) {
            throw ValidationError(std::string("KS: ") + which + " contains NaN");
        }
    }
}

} // namespace detail

/// Sorts copies of both samples and walks the merged order once. Values tied
/// across samples are consumed together, so the result is sup |F1 - F2| exactly.
inline KsLatticeStatistic ks_lattice_statistic(std::span<const double> sample1, std::span<const double> sample2) {
    detail::check_sample(sample1, "sample 1");
    detail::check_sample(sample2, "sample 2");
    std::vector<double> x(sample1.begin(), sample1.end());
    std::vector<double> y(sample2.begin(), sample2.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const auto n1 = static_cast<std::int64_t>(x.size());
    const auto n2 = static_cast<std::int64_t>(y.size());

    KsLatticeStatistic out;
    out.n1 = x.size();
    out.n2 = y.size();
    std::int64_t i = 0;
    std::int64_t j = 0;
    std::int64_t best = 0;
    while (i < n1 || j < n2) {
        const double t = (j >= n2 || (i < n1 && x[i] <= y[j])) ? x[i] : y[j];
        const bool in_x = i < n1 && x[i] == t;
        const bool in_y = j < n2 && y[j] == t;
        out.ties = out.ties || (in_x && in_y);
        while (i < n1 && x[i] == t) {
            ++i;
        }
        while (j < n2 && y[j] == t) {
            ++j;
        }
        best = std::max(best, std::abs(i * n2 - j * n1));
    }
    out.k = static_cast<std::uint64_t>(best);
    return out;
}

inline double ks_statistic(std::span<const double> sample1, std::span<const double> sample2) {
    return ks_lattice_statistic(sample1, sample2).d();
}

/// Exact probability as a ratio of path counts.
struct ExactProbability {
    BigInt favourable;
    BigInt total;

    BigRational rational() const { return BigRational(favourable, total); }
    double value() const { return rational().convert_to<double>(); }
};

namespace detail {

inline void check_sizes(std::size_t n1, std::size_t n2) {
    if (n1 == 0 || n2 == 0) {
        throw ValidationError("KS: sample sizes must be positive");
    }
}

inline BigInt binomial(std::size_t n, std::size_t k) {
    BigInt acc = 1;
    k = std::min(k, n - k);
    for (std::size_t i = 1; i <= k; ++i) {
        acc *= n - k + i;
        acc /= i;
    }
    return acc;
}

/// Monotone lattice paths (0,0) -> (n1,n2) whose every point has |i*n2 - j*n1| <= limit.
template <class Count>
Count count_paths_within(std::size_t n1, std::size_t n2, std::int64_t limit) {
    if (limit < 0) {
        return Count(0);
    }
    const auto a = static_cast<std::int64_t>(n2);
    const auto b = static_cast<std::int64_t>(n1);
    std::vector<Count> u(n2 + 1, Count(0));
    for (std::size_t i = 0; i <= n1; ++i) {
        for (std::size_t j = 0; j <= n2; ++j) {
            const std::int64_t gap = static_cast<std::int64_t>(i) * a - static_cast<std::int64_t>(j) * b;
            if (gap > limit || -gap > limit) {
                u[j] = Count(0);
            } else if (i == 0 && j == 0) {
                u[j] = Count(1);
            } else {
                // u[j] still holds row i-1 (zero on the first row)
                Count from_left = j > 0 ? u[j - 1] : Count(0);
                u[j] = (i > 0 ? u[j] : Count(0)) + from_left;
            }
        }
    }
    return u[n2];
}

inline BigInt to_big(uint128 v) {
    BigInt hi = static_cast<std::uint64_t>(v >> 64);
    return (hi << 64) | BigInt(static_cast<std::uint64_t>(v));
}

inline BigInt paths_within(std::size_t n1, std::size_t n2, std::int64_t limit, const BigInt& total) {
    static const BigInt int128_room = BigInt(1) << 126;
    if (total < int128_room) {
        return to_big(count_paths_within<uint128>(n1, n2, limit));
    }
    return count_paths_within<BigInt>(n1, n2, limit);
}

/// Smallest lattice k with k/(n1 n2) >= d, tolerant of d having been rounded.
inline std::int64_t lattice_ceiling(double d, std::size_t n1, std::size_t n2) {
    const double scaled = d * static_cast<double>(n1) * static_cast<double>(n2);
    return static_cast<std::int64_t>(std::ceil(scaled - 1e-9 * std::max(1.0, scaled)));
}

} // namespace detail

/// P(K >= k) under the exchangeable continuous null, as an exact ratio.
inline ExactProbability ks_exact_survival(std::uint64_t k, std::size_t n1, std::size_t n2) {
    detail::check_sizes(n1, n2);
    BigInt total = detail::binomial(n1 + n2, n1);
    if (k == 0) {
        return {total, total};
    }
    BigInt inside = detail::paths_within(n1, n2, static_cast<std::int64_t>(k) - 1, total);
    return {total - inside, std::move(total)};
}

/// P(D >= d) as an exact ratio.
inline ExactProbability ks_exact_pvalue_exact(double d, std::size_t n1, std::size_t n2) {
    detail::check_sizes(n1, n2);
    if (!(d >= 0.0 && d <= 1.0)) {
        throw ValidationError("KS: d must lie in [0, 1]");
    }
    const std::int64_t k = detail::lattice_ceiling(d, n1, n2);
    return ks_exact_survival(static_cast<std::uint64_t>(std::max<std::int64_t>(k, 0)), n1, n2);
}

/// P(D >= d) for two samples of sizes n1 and n2, computed exactly.
inline double ks_exact_pvalue(double d, std::size_t n1, std::size_t n2) {
    return ks_exact_pvalue_exact(d, n1, n2).value();
}

struct KsCdfEntry {
    std::uint64_t k = 0; // lattice value, d = k / (n1 n2)
    double d = 0.0;
    double cdf = 0.0;      // P(D <= d)
    double survival = 0.0; // P(D >= d)
};

/// Full null distribution of D over its achievable values.
struct KsCdfTable {
    std::size_t n1 = 0;
    std::size_t n2 = 0;
    std::vector<KsCdfEntry> entries;

    StepFunction step_function() const {
        std::vector<double> points;
        std::vector<double> values;
        for (const auto& e : entries) {
            points.push_back(e.d);
            values.push_back(e.cdf);
        }
        return StepFunction(std::move(points), std::move(values));
    }

    /// P(K >= k) for any lattice k.
    double survival(std::uint64_t k) const {
        const auto it = std::lower_bound(entries.begin(), entries.end(), k,
                                         [](const KsCdfEntry& e, std::uint64_t v) { return e.k < v; });
        return it == entries.end() ? 0.0 : it->survival;
    }
};

inline constexpr std::uint64_t default_ks_cdf_budget = 10'000;

inline KsCdfTable ks_exact_cdf(std::size_t n1, std::size_t n2, std::uint64_t budget = default_ks_cdf_budget) {
    detail::check_sizes(n1, n2);
    if (static_cast<std::uint64_t>(n1) * n2 > budget) {
        throw ResourceError("KS CDF table for n1*n2 = " + std::to_string(static_cast<std::uint64_t>(n1) * n2) +
                            " exceeds budget " + std::to_string(budget));
    }
    std::vector<std::int64_t> candidates;
    for (std::size_t i = 0; i <= n1; ++i) {
        for (std::size_t j = 0; j <= n2; ++j) {
            candidates.push_back(std::abs(static_cast<std::int64_t>(i * n2) - static_cast<std::int64_t>(j * n1)));
        }
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    const BigInt total = detail::binomial(n1 + n2, n1);
    const double scale = static_cast<double>(n1) * static_cast<double>(n2);
    KsCdfTable table{n1, n2, {}};
    BigInt previous = 0;
    for (std::int64_t v : candidates) {
        BigInt inside = detail::paths_within(n1, n2, v, total);
        if (inside == previous) {
            continue; // not an achievable value of D
        }
        KsCdfEntry e;
        e.k = static_cast<std::uint64_t>(v);
        e.d = static_cast<double>(v) / scale;
        e.cdf = BigRational(inside, total).convert_to<double>();
        e.survival = BigRational(total - previous, total).convert_to<double>();
        table.entries.push_back(e);
        previous = std::move(inside);
        if (previous == total) {
            break;
        }
    }
    return table;
}

inline void write_cdf_csv(std::ostream& out, const KsCdfTable& table) {
    out << "d,cdf\n";
    for (const auto& e : table.entries) {
        out << detail::format_double(e.d) << ',' << detail::format_double(e.cdf) << '\n';
    }
}

/**
 * Exact p-values for one (n1, n2) design, cached by lattice value.
 * Thread-safe; used wherever many rows are tested with the same group sizes.
 */
class KsNullDistribution {
public:
    KsNullDistribution(std::size_t n1, std::size_t n2) : n1_(n1), n2_(n2) {
        detail::check_sizes(n1, n2);
    }

    std::size_t n1() const noexcept { return n1_; }
    std::size_t n2() const noexcept { return n2_; }

    double pvalue(std::uint64_t k) const {
        {
            std::lock_guard lock(mutex_);
            if (auto it = cache_.find(k); it != cache_.end()) {
                return it->second;
            }
        }
        const double p = ks_exact_survival(k, n1_, n2_).value();
        std::lock_guard lock(mutex_);
        cache_.emplace(k, p);
        return p;
    }

private:
    std::size_t n1_;
    std::size_t n2_;
    mutable std::mutex mutex_;
    mutable std::map<std::uint64_t, double> cache_;
};

struct KSResult {
    double d = 0.0;
    double p_exact = 1.0;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
    std::uint64_t lattice_k = 0;
    bool ties = false;
};

/// KS statistic and exact p-value; ties are flagged and the p-value still
/// assumes continuous data.
inline KSResult ks_test(std::span<const double> sample1, std::span<const double> sample2) {
    const auto stat = ks_lattice_statistic(sample1, sample2);
    return KSResult{stat.d(), ks_exact_survival(stat.k, stat.n1, stat.n2).value(), stat.n1, stat.n2, stat.k,
                    stat.ties};
}

inline KSResult ks_test(std::span<const double> sample1, std::span<const double> sample2,
                        const KsNullDistribution& null) {
    const auto stat = ks_lattice_statistic(sample1, sample2);
    if (stat.n1 != null.n1() || stat.n2 != null.n2()) {
        throw ValidationError("KS: sample sizes do not match the null distribution");
    }
    return KSResult{stat.d(), null.pvalue(stat.k), stat.n1, stat.n2, stat.k, stat.ties};
}

} // namespace deltaseq
