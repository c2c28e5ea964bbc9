#pragma once

#include "error.hpp"

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace deltaseq {

/// Dense row-major matrix of doubles. Rows are genes (or increments), columns arrays.
class RealMatrix {
public:
    RealMatrix() = default;
    RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::span<const double> data() const noexcept { return data_; }

    friend bool operator==(const RealMatrix&, const RealMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Anything that exposes rows of doubles of a common length.
template <class M>
concept RowMatrix = requires(const M& m, std::size_t i) {
    { m.rows() } -> std::convertible_to<std::size_t>;
    { m.cols() } -> std::convertible_to<std::size_t>;
    { m.row(i) } -> std::convertible_to<std::span<const double>>;
};

/// Human-readable name of row i, for error messages.
template <RowMatrix M>
std::string row_label(const M& m, std::size_t i) {
    if constexpr (requires { m.row_name(i); }) {
        return std::string(m.row_name(i));
    } else {
        return "row " + std::to_string(i);
    }
}

namespace stats {

inline double mean(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) {
        s += v;
    }
    return s / static_cast<double>(x.size());
}

/// Unbiased sample variance, two-pass.
inline double variance(std::span<const double> x) {
    if (x.size() < 2) {
        throw ValidationError("sample variance needs at least 2 values");
    }
    const double mu = mean(x);
    double ss = 0.0;
    for (double v : x) {
        ss += (v - mu) * (v - mu);
    }
    return ss / static_cast<double>(x.size() - 1);
}

inline double sd(std::span<const double> x) { return std::sqrt(variance(x)); }

/// Unbiased sample covariance, two-pass.
inline double covariance(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ValidationError("covariance: length mismatch");
    }
    if (x.size() < 2) {
        throw ValidationError("sample covariance needs at least 2 values");
    }
    const double mx = mean(x);
    const double my = mean(y);
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        s += (x[k] - mx) * (y[k] - my);
    }
    return s / static_cast<double>(x.size() - 1);
}

/// Mean and sample sd of a list of values; sd is 0 for fewer than two values.
struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

inline MeanSd mean_sd(std::span<const double> x) {
    MeanSd out;
    if (x.empty()) {
        return out;
    }
    out.mean = mean(x);
    if (x.size() > 1) {
        out.sd = sd(x);
    }
    return out;
}

} // namespace stats

} // namespace deltaseq
