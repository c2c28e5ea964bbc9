#pragma once

#include "datamodel.hpp"
#include "error.hpp"
#include "matrix.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace deltaseq {

/// Genes sorted by ascending sample variance; always of even length.
struct GeneOrdering {
    std::vector<std::size_t> permutation;
    std::vector<double> variances;
    /// Lowest-variance gene, discarded when the gene count was odd.
    std::optional<std::size_t> dropped;

    std::size_t size() const noexcept { return permutation.size(); }
    std::size_t pair_count() const noexcept { return permutation.size() / 2; }
    /// Gene at 1-based position 2i-1 / 2i of pair i (0-based here).
    std::size_t lower(std::size_t pair) const { return permutation[2 * pair]; }
    std::size_t upper(std::size_t pair) const { return permutation[2 * pair + 1]; }
};

/**
 * Orders rows by ascending unbiased sample variance, ties by ascending row index.
 * With an odd row count the lowest-variance row is dropped.
 */
template <RowMatrix M>
GeneOrdering variance_ordering(const M& m) {
    if (m.cols() < ExpressionMatrix::min_arrays) {
        throw ValidationError("variance ordering needs at least 4 arrays");
    }
    std::vector<double> var(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        var[i] = stats::variance(m.row(i));
    }
    std::vector<std::size_t> perm(m.rows());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return var[a] < var[b]; });

    GeneOrdering out;
    if (perm.size() % 2 == 1) {
        out.dropped = perm.front();
        perm.erase(perm.begin());
    }
    out.variances.reserve(perm.size());
    for (std::size_t g : perm) {
        out.variances.push_back(var[g]);
    }
    out.permutation = std::move(perm);
    return out;
}

/**
 * The delta-sequence: row i holds (gene at position 2i) - (gene at position 2i-1)
 * on every array, positions counted 1-based along a GeneOrdering.
 */
class DeltaMatrix {
public:
    DeltaMatrix(RealMatrix values, GeneOrdering ordering, std::vector<std::string> row_ids,
                std::vector<std::string> array_ids)
        : values_(std::move(values)), ordering_(std::move(ordering)), row_ids_(std::move(row_ids)),
          array_ids_(std::move(array_ids)) {}

    std::size_t rows() const noexcept { return values_.rows(); }
    std::size_t cols() const noexcept { return values_.cols(); }
    std::span<const double> row(std::size_t i) const { return values_.row(i); }
    double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }
    const std::string& row_name(std::size_t i) const { return row_ids_[i]; }

    const RealMatrix& values() const noexcept { return values_; }
    const GeneOrdering& ordering() const noexcept { return ordering_; }
    /// (lower-variance gene, higher-variance gene) of row i.
    std::pair<std::size_t, std::size_t> pair(std::size_t i) const { return {ordering_.lower(i), ordering_.upper(i)}; }
    const std::vector<std::string>& row_ids() const noexcept { return row_ids_; }
    const std::vector<std::string>& array_ids() const noexcept { return array_ids_; }

private:
    RealMatrix values_;
    GeneOrdering ordering_;
    std::vector<std::string> row_ids_;
    std::vector<std::string> array_ids_;
};

namespace detail {

inline void check_ordering(const GeneOrdering& ordering, std::size_t genes) {
    if (ordering.permutation.size() % 2 != 0) {
        throw ValidationError("gene ordering must have even length");
    }
    std::vector<bool> seen(genes, false);
    for (std::size_t g : ordering.permutation) {
        if (g >= genes) {
            throw ValidationError("ordering refers to gene " + std::to_string(g) + " but the matrix has " +
                                  std::to_string(genes) + " genes");
        }
        if (seen[g]) {
            throw ValidationError("ordering repeats gene " + std::to_string(g));
        }
        seen[g] = true;
    }
}

} // namespace detail

/// Increments on any row matrix; the ordering may come from another sample
/// over the same gene universe.
template <RowMatrix M>
RealMatrix delta_values(const M& m, const GeneOrdering& ordering) {
    detail::check_ordering(ordering, m.rows());
    RealMatrix out(ordering.pair_count(), m.cols());
    for (std::size_t i = 0; i < ordering.pair_count(); ++i) {
        const auto lo = m.row(ordering.lower(i));
        const auto hi = m.row(ordering.upper(i));
        auto dst = out.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) {
            dst[j] = hi[j] - lo[j];
        }
    }
    return out;
}

inline DeltaMatrix delta_sequence(const ExpressionMatrix& m, const GeneOrdering& ordering) {
    RealMatrix values = delta_values(m, ordering);
    std::vector<std::string> ids;
    ids.reserve(ordering.pair_count());
    for (std::size_t i = 0; i < ordering.pair_count(); ++i) {
        ids.push_back("pair" + std::to_string(i + 1) + ":" + m.gene_ids()[ordering.lower(i)] + "-" +
                      m.gene_ids()[ordering.upper(i)]);
    }
    return DeltaMatrix(std::move(values), ordering, std::move(ids), m.array_ids());
}

/// Genes at even positions (the higher-variance member of every pair), in order.
inline std::vector<std::size_t> even_position_genes(const GeneOrdering& ordering) {
    std::vector<std::size_t> out;
    out.reserve(ordering.pair_count());
    for (std::size_t i = 0; i < ordering.pair_count(); ++i) {
        out.push_back(ordering.upper(i));
    }
    return out;
}

/// CSV `rank,gene_id,variance`, rank 1-based.
inline void write_ordering_csv(std::ostream& out, const GeneOrdering& ordering,
                               const std::vector<std::string>& gene_ids) {
    out << "rank,gene_id,variance\n";
    for (std::size_t r = 0; r < ordering.size(); ++r) {
        out << (r + 1) << ',' << gene_ids[ordering.permutation[r]] << ','
            << detail::format_double(ordering.variances[r]) << '\n';
    }
}

inline void write_delta(std::ostream& out, const DeltaMatrix& d) {
    write_table(out, d.row_ids(), d.array_ids(), d.values());
}

} // namespace deltaseq
