#pragma once

#include "datamodel.hpp"
#include "error.hpp"
#include "random.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace deltaseq {

/**
 * Planted type-A chains: within a chain, gene k+1 = gene k + z_k with z_k
 * independent of everything before it. An optional per-array shared factor is
 * added to every gene.
 */
struct ChainSpec {
    std::size_t m = 1000;
    std::size_t n = 100;
    double base_sd = 1.0;
    double increment_sd = 0.5;
    double shared_factor_sd = 0.0;
    std::size_t chain_length = 10;
    std::uint64_t seed = 1;
    double base_mean = 8.0;
    double increment_mean = 0.25;
};

/// Independent genes plus an optional per-array shared factor.
struct NullSpec {
    std::size_t m = 1000;
    std::size_t n = 100;
    double shared_factor_sd = 0.0;
    double gene_sd = 1.0;
    std::uint64_t seed = 1;
};

namespace detail {

inline void check_sd(double sd, const char* name, bool strictly_positive = false) {
    if (!std::isfinite(sd) || sd < 0.0 || (strictly_positive && sd == 0.0)) {
        throw ValidationError(std::string(name) + (strictly_positive ? " must be > 0" : " must be >= 0"));
    }
}

inline void check_dims(std::size_t m, std::size_t n) {
    if (m < ExpressionMatrix::min_genes || n < ExpressionMatrix::min_arrays) {
        throw ValidationError("synthetic matrix needs m >= 2 and n >= 4");
    }
}

inline std::vector<std::string> numbered_ids(const char* prefix, std::size_t count) {
    std::vector<std::string> ids;
    ids.reserve(count);
    for (std::size_t k = 1; k <= count; ++k) {
        ids.push_back(prefix + std::to_string(k));
    }
    return ids;
}

} // namespace detail

inline void validate(const ChainSpec& spec) {
    detail::check_dims(spec.m, spec.n);
    if (spec.chain_length == 0 || spec.m % spec.chain_length != 0) {
        throw ValidationError("gene count must be a positive multiple of chain_length");
    }
    detail::check_sd(spec.base_sd, "base_sd", true);
    detail::check_sd(spec.increment_sd, "increment_sd");
    detail::check_sd(spec.shared_factor_sd, "shared_factor_sd");
    if (!std::isfinite(spec.base_mean) || !std::isfinite(spec.increment_mean)) {
        throw ValidationError("means must be finite");
    }
}

// Each array column draws from its own derived stream.
inline ExpressionMatrix generate_chain_matrix(const ChainSpec& spec) {
    validate(spec);
    RealMatrix values(spec.m, spec.n);
    const std::size_t chains = spec.m / spec.chain_length;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t j = 0; j < spec.n; ++j) {
        Rng rng = make_rng(spec.seed, j);
        const double shared = spec.shared_factor_sd * normal(rng);
        for (std::size_t c = 0; c < chains; ++c) {
            double x = spec.base_mean + spec.base_sd * normal(rng);
            for (std::size_t k = 0; k < spec.chain_length; ++k) {
                if (k > 0) {
                    x += spec.increment_mean + spec.increment_sd * normal(rng);
                }
                values(c * spec.chain_length + k, j) = x + shared;
            }
        }
    }
    return ExpressionMatrix(detail::numbered_ids("G", spec.m), detail::numbered_ids("A", spec.n), std::move(values),
                            true);
}

inline ExpressionMatrix generate_null_matrix(std::size_t m, std::size_t n, double shared_factor_sd, double gene_sd,
                                             std::uint64_t seed) {
    detail::check_dims(m, n);
    detail::check_sd(shared_factor_sd, "shared_factor_sd");
    detail::check_sd(gene_sd, "gene_sd");
    RealMatrix values(m, n);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
        Rng rng = make_rng(seed, j);
        const double shared = shared_factor_sd * normal(rng);
        for (std::size_t i = 0; i < m; ++i) {
            values(i, j) = gene_sd * normal(rng) + shared;
        }
    }
    return ExpressionMatrix(detail::numbered_ids("G", m), detail::numbered_ids("A", n), std::move(values), true);
}

inline ExpressionMatrix generate_null_matrix(const NullSpec& spec) {
    return generate_null_matrix(spec.m, spec.n, spec.shared_factor_sd, spec.gene_sd, spec.seed);
}

/// Log-additive Gaussian noise: per (gene, array), or one value per array shared by all genes.
inline ExpressionMatrix add_noise(const ExpressionMatrix& m, const NoiseModel& model, std::uint64_t seed) {
    if (!m.log_scale()) {
        throw StateError("noise models are log-additive; matrix is not on log scale");
    }
    detail::check_sd(model.sd, "noise sd");
    if (model.sd == 0.0) {
        return m;
    }
    RealMatrix values = m.values();
    std::normal_distribution<double> normal(0.0, model.sd);
    for (std::size_t j = 0; j < m.cols(); ++j) {
        Rng rng = make_rng(seed, j);
        if (model.kind == NoiseKind::array_only) {
            const double e = normal(rng);
            for (std::size_t i = 0; i < m.rows(); ++i) {
                values(i, j) += e;
            }
        } else {
            for (std::size_t i = 0; i < m.rows(); ++i) {
                values(i, j) += normal(rng);
            }
        }
    }
    return ExpressionMatrix(m.gene_ids(), m.array_ids(), std::move(values), true);
}

inline void from_json(const nlohmann::json& j, ChainSpec& s) {
    const ChainSpec d;
    s.m = j.value("m", d.m);
    s.n = j.value("n", d.n);
    s.base_sd = j.value("base_sd", d.base_sd);
    s.increment_sd = j.value("increment_sd", d.increment_sd);
    s.shared_factor_sd = j.value("shared_factor_sd", d.shared_factor_sd);
    s.chain_length = j.value("chain_length", d.chain_length);
    s.seed = j.value("seed", d.seed);
    s.base_mean = j.value("base_mean", d.base_mean);
    s.increment_mean = j.value("increment_mean", d.increment_mean);
}

inline void to_json(nlohmann::json& j, const ChainSpec& s) {
    j = nlohmann::json{{"kind", "chain"},
                       {"m", s.m},
                       {"n", s.n},
                       {"base_sd", s.base_sd},
                       {"increment_sd", s.increment_sd},
                       {"shared_factor_sd", s.shared_factor_sd},
                       {"chain_length", s.chain_length},
                       {"seed", s.seed},
                       {"base_mean", s.base_mean},
                       {"increment_mean", s.increment_mean}};
}

inline void from_json(const nlohmann::json& j, NullSpec& s) {
    const NullSpec d;
    s.m = j.value("m", d.m);
    s.n = j.value("n", d.n);
    s.shared_factor_sd = j.value("shared_factor_sd", d.shared_factor_sd);
    s.gene_sd = j.value("gene_sd", d.gene_sd);
    s.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const NullSpec& s) {
    j = nlohmann::json{{"kind", "null"},
                       {"m", s.m},
                       {"n", s.n},
                       {"shared_factor_sd", s.shared_factor_sd},
                       {"gene_sd", s.gene_sd},
                       {"seed", s.seed}};
}

} // namespace deltaseq
