#pragma once

#include "error.hpp"
#include "matrix.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace deltaseq {

/**
 * m genes by n arrays of expression values.
 *
 * Immutable once built; every constructor path checks that values are finite,
 * ids are unique, m >= 2 and n >= 4.
 */
class ExpressionMatrix {
public:
    static constexpr std::size_t min_genes = 2;
    static constexpr std::size_t min_arrays = 4;

    ExpressionMatrix(std::vector<std::string> gene_ids, std::vector<std::string> array_ids, RealMatrix values,
                     bool log_scale)
        : gene_ids_(std::move(gene_ids)), array_ids_(std::move(array_ids)), values_(std::move(values)),
          log_scale_(log_scale) {
        validate();
    }

    std::size_t rows() const noexcept { return values_.rows(); }
    std::size_t cols() const noexcept { return values_.cols(); }
    std::size_t genes() const noexcept { return values_.rows(); }
    std::size_t arrays() const noexcept { return values_.cols(); }

    std::span<const double> row(std::size_t i) const { return values_.row(i); }
    double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }
    const std::string& row_name(std::size_t i) const { return gene_ids_[i]; }

    const std::vector<std::string>& gene_ids() const noexcept { return gene_ids_; }
    const std::vector<std::string>& array_ids() const noexcept { return array_ids_; }
    const RealMatrix& values() const noexcept { return values_; }
    bool log_scale() const noexcept { return log_scale_; }

    friend bool operator==(const ExpressionMatrix&, const ExpressionMatrix&) = default;

private:
    void validate() const {
        if (gene_ids_.size() != values_.rows()) {
            throw ValidationError("gene id count " + std::to_string(gene_ids_.size()) +
                                  " does not match row count " + std::to_string(values_.rows()));
        }
        if (array_ids_.size() != values_.cols()) {
            throw ValidationError("array id count " + std::to_string(array_ids_.size()) +
                                  " does not match column count " + std::to_string(values_.cols()));
        }
        if (values_.rows() < min_genes) {
            throw ValidationError("expression matrix needs at least 2 genes, got " +
                                  std::to_string(values_.rows()));
        }
        if (values_.cols() < min_arrays) {
            throw ValidationError("expression matrix needs at least 4 arrays, got " +
                                  std::to_string(values_.cols()));
        }
        check_unique(gene_ids_, "gene");
        check_unique(array_ids_, "array");
        for (std::size_t i = 0; i < values_.rows(); ++i) {
            for (std::size_t j = 0; j < values_.cols(); ++j) {
                if (!std::isfinite(values_(i, j))) {
                    throw ValidationError("non-finite value at gene '" + gene_ids_[i] + "', array '" +
                                          array_ids_[j] + "'");
                }
            }
        }
    }

    static void check_unique(const std::vector<std::string>& ids, const char* what) {
        std::unordered_set<std::string_view> seen;
        for (const auto& id : ids) {
            if (!seen.insert(id).second) {
                throw ValidationError(std::string("duplicate ") + what + " id '" + id + "'");
            }
        }
    }

    std::vector<std::string> gene_ids_;
    std::vector<std::string> array_ids_;
    RealMatrix values_;
    bool log_scale_ = true;
};

enum class NoiseKind { gene_array, array_only };

/// Log-additive technical noise: one draw per (gene, array) or one per array.
struct NoiseModel {
    NoiseKind kind = NoiseKind::gene_array;
    double sd = 0.0;
};

struct LoadOptions {
    char delimiter = '\t';
    bool has_header = true;
    /// Whether the stored values are already on log scale.
    bool log_scale = true;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            cells.push_back(trim(line.substr(start)));
            return cells;
        }
        cells.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
}

inline double parse_number(std::string_view cell, std::size_t line) {
    if (cell.empty()) {
        throw ParseError("empty cell (missing values are not supported)", line);
    }
    std::string_view body = cell;
    if (body.front() == '+') {
        body.remove_prefix(1);
    }
    double value = 0.0;
    const auto [end, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
    if (ec != std::errc{} || end != body.data() + body.size()) {
        throw ParseError("non-numeric cell '" + std::string(cell) + "'", line);
    }
    if (!std::isfinite(value)) {
        throw ParseError("non-finite cell '" + std::string(cell) + "'", line);
    }
    return value;
}

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

} // namespace detail

/// Parses a delimited expression table: genes as rows, first column the gene id.
inline ExpressionMatrix parse_matrix(std::istream& in, const LoadOptions& options = {}) {
    std::vector<std::string> gene_ids;
    std::vector<std::string> array_ids;
    std::vector<double> values;
    std::size_t width = 0; // number of value columns
    bool header_pending = options.has_header;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) {
            continue;
        }
        const auto cells = detail::split(line, options.delimiter);
        if (header_pending) {
            header_pending = false;
            if (cells.size() < 2) {
                throw ParseError("header has no array columns", line_no);
            }
            width = cells.size() - 1;
            for (std::size_t c = 1; c < cells.size(); ++c) {
                array_ids.emplace_back(cells[c]);
            }
            continue;
        }
        if (width == 0) {
            if (cells.size() < 2) {
                throw ParseError("row has no value columns", line_no);
            }
            width = cells.size() - 1;
            for (std::size_t c = 1; c <= width; ++c) {
                array_ids.push_back("A" + std::to_string(c));
            }
        }
        if (cells.size() != width + 1) {
            throw ParseError("expected " + std::to_string(width + 1) + " columns, found " +
                                 std::to_string(cells.size()),
                             line_no);
        }
        if (cells[0].empty()) {
            throw ParseError("empty gene id", line_no);
        }
        gene_ids.emplace_back(cells[0]);
        for (std::size_t c = 1; c < cells.size(); ++c) {
            values.push_back(detail::parse_number(cells[c], line_no));
        }
    }

    RealMatrix m(gene_ids.size(), width);
    for (std::size_t i = 0; i < gene_ids.size(); ++i) {
        auto row = m.row(i);
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(i * width), width, row.begin());
    }
    return ExpressionMatrix(std::move(gene_ids), std::move(array_ids), std::move(m), options.log_scale);
}

inline ExpressionMatrix load_matrix(const std::filesystem::path& path, const LoadOptions& options = {}) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open '" + path.string() + "'");
    }
    return parse_matrix(in, options);
}

/// Writes any labelled matrix in the TSV layout parse_matrix reads.
inline void write_table(std::ostream& out, const std::vector<std::string>& row_ids,
                        const std::vector<std::string>& col_ids, const RealMatrix& values) {
    out << "gene_id";
    for (const auto& id : col_ids) {
        out << '\t' << id;
    }
    out << '\n';
    for (std::size_t i = 0; i < values.rows(); ++i) {
        out << row_ids[i];
        for (double v : values.row(i)) {
            out << '\t' << detail::format_double(v);
        }
        out << '\n';
    }
}

inline void write_matrix(std::ostream& out, const ExpressionMatrix& m) {
    write_table(out, m.gene_ids(), m.array_ids(), m.values());
}

inline void write_matrix(const std::filesystem::path& path, const ExpressionMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError("cannot write '" + path.string() + "'");
    }
    write_matrix(out, m);
}

/// log_base of every value. No other normalization is applied.
inline ExpressionMatrix log_transform(const ExpressionMatrix& m, double base = 2.0) {
    if (m.log_scale()) {
        throw StateError("matrix is already on log scale");
    }
    if (!(base > 1.0) || !std::isfinite(base)) {
        throw ValidationError("log base must be a finite real > 1");
    }
    const double log_base = std::log(base);
    RealMatrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            if (!(v > 0.0)) {
                throw DomainError("cannot take log of " + detail::format_double(v) + " at gene '" +
                                  m.gene_ids()[i] + "', array '" + m.array_ids()[j] + "'");
            }
            out(i, j) = base == 2.0 ? std::log2(v) : std::log(v) / log_base;
        }
    }
    return ExpressionMatrix(m.gene_ids(), m.array_ids(), std::move(out), true);
}

namespace detail {

inline void check_selection(std::span<const std::size_t> indices, std::size_t bound, const char* what) {
    std::vector<bool> used(bound, false);
    for (std::size_t idx : indices) {
        if (idx >= bound) {
            throw ValidationError(std::string(what) + " index " + std::to_string(idx) + " out of range [0, " +
                                  std::to_string(bound) + ")");
        }
        if (used[idx]) {
            throw ValidationError(std::string(what) + " index " + std::to_string(idx) + " repeated");
        }
        used[idx] = true;
    }
}

} // namespace detail

/// Columns restricted and reordered to `indices`; gene rows untouched.
inline ExpressionMatrix select_arrays(const ExpressionMatrix& m, std::span<const std::size_t> indices) {
    detail::check_selection(indices, m.cols(), "array");
    RealMatrix out(m.rows(), indices.size());
    std::vector<std::string> ids;
    ids.reserve(indices.size());
    for (std::size_t c = 0; c < indices.size(); ++c) {
        ids.push_back(m.array_ids()[indices[c]]);
    }
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t c = 0; c < indices.size(); ++c) {
            out(i, c) = m(i, indices[c]);
        }
    }
    return ExpressionMatrix(m.gene_ids(), std::move(ids), std::move(out), m.log_scale());
}

/// Rows restricted and reordered to `indices`.
inline ExpressionMatrix select_genes(const ExpressionMatrix& m, std::span<const std::size_t> indices) {
    detail::check_selection(indices, m.rows(), "gene");
    RealMatrix out(indices.size(), m.cols());
    std::vector<std::string> ids;
    ids.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        ids.push_back(m.gene_ids()[indices[r]]);
        const auto src = m.row(indices[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return ExpressionMatrix(std::move(ids), m.array_ids(), std::move(out), m.log_scale());
}

/// Columns of `m` picked by `indices`, without the ExpressionMatrix size floor.
template <RowMatrix M>
RealMatrix take_columns(const M& m, std::span<const std::size_t> indices) {
    RealMatrix out(m.rows(), indices.size());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto src = m.row(i);
        auto dst = out.row(i);
        for (std::size_t c = 0; c < indices.size(); ++c) {
            dst[c] = src[indices[c]];
        }
    }
    return out;
}

/// Rows of `m` picked by `indices`.
template <RowMatrix M>
RealMatrix take_rows(const M& m, std::span<const std::size_t> indices) {
    RealMatrix out(indices.size(), m.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto src = m.row(indices[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

/// Side-by-side concatenation of two matrices with equal row counts.
template <RowMatrix A, RowMatrix B>
RealMatrix concat_columns(const A& a, const B& b) {
    if (a.rows() != b.rows()) {
        throw ValidationError("cannot concatenate matrices with different row counts");
    }
    RealMatrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        const auto ra = a.row(i);
        const auto rb = b.row(i);
        std::copy(ra.begin(), ra.end(), dst.begin());
        std::copy(rb.begin(), rb.end(), dst.begin() + static_cast<std::ptrdiff_t>(ra.size()));
    }
    return out;
}

} // namespace deltaseq
