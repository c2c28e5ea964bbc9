#pragma once

#include "datamodel.hpp"
#include "error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace deltaseq {

/// Per-family error rate target gamma; gamma may exceed 1.
struct ScreenConfig {
    double pfer = 1.0;

    /// Single-step per-test level gamma / m, clamped to 1.
    double threshold(std::size_t m) const {
        if (!(pfer > 0.0) || !std::isfinite(pfer)) {
            throw ValidationError("PFER level must be a positive finite real");
        }
        if (m == 0) {
            throw ValidationError("no hypotheses to test");
        }
        return std::min(1.0, pfer / static_cast<double>(m));
    }
};

struct RejectionReport {
    std::size_t m = 0;
    double threshold = 0.0;
    std::vector<std::size_t> rejected; // ascending
    std::vector<double> p_values;
    /// true = hypothesis genuinely modified
    std::optional<std::vector<bool>> truth;
    std::size_t fp = 0;
    std::size_t tp = 0;
    double fdr = 0.0;
};

/**
 * Extended Bonferroni: reject every hypothesis with p <= gamma / m.
 * Controls the expected number of false discoveries at gamma.
 */
inline RejectionReport extended_bonferroni(std::span<const double> p_values, double pfer) {
    RejectionReport report;
    report.m = p_values.size();
    report.threshold = ScreenConfig{pfer}.threshold(p_values.size());
    report.p_values.assign(p_values.begin(), p_values.end());
    for (std::size_t i = 0; i < p_values.size(); ++i) {
        const double p = p_values[i];
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError("p-value " + detail::format_double(p) + " at index " + std::to_string(i) +
                                  " is outside [0, 1]");
        }
        if (p <= report.threshold) {
            report.rejected.push_back(i);
        }
    }
    return report;
}

/// Fills fp, tp and fdr = fp / max(#rejected, 1) against known truth.
inline RejectionReport confusion_counts(RejectionReport report, std::vector<bool> truth) {
    if (truth.size() != report.m) {
        throw ValidationError("truth has " + std::to_string(truth.size()) + " entries for " +
                              std::to_string(report.m) + " hypotheses");
    }
    report.fp = 0;
    report.tp = 0;
    for (std::size_t i : report.rejected) {
        if (truth[i]) {
            ++report.tp;
        } else {
            ++report.fp;
        }
    }
    report.fdr = static_cast<double>(report.fp) / static_cast<double>(std::max<std::size_t>(report.rejected.size(), 1));
    report.truth = std::move(truth);
    return report;
}

inline void to_json(nlohmann::json& j, const RejectionReport& r) {
    j = nlohmann::json{{"m", r.m},
                       {"threshold", r.threshold},
                       {"rejected", r.rejected.size()},
                       {"fp", r.fp},
                       {"tp", r.tp},
                       {"fdr", r.fdr},
                       {"has_truth", r.truth.has_value()}};
}

/// CSV `index,p,rejected,truth`; truth is empty when unknown.
inline void write_rejection_csv(std::ostream& out, const RejectionReport& r) {
    std::vector<bool> is_rejected(r.m, false);
    for (std::size_t i : r.rejected) {
        is_rejected[i] = true;
    }
    out << "index,p,rejected,truth\n";
    for (std::size_t i = 0; i < r.m; ++i) {
        out << i << ',' << detail::format_double(r.p_values[i]) << ',' << (is_rejected[i] ? 1 : 0) << ',';
        if (r.truth) {
            out << ((*r.truth)[i] ? 1 : 0);
        }
        out << '\n';
    }
}

} // namespace deltaseq
