// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "cli_app.hpp"
#include "oracles.hpp"

#include <deltaseq/deltaseq.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

using namespace deltaseq;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

// 1. Exact p-values equal exhaustive enumeration for every n1 + n2 <= 12.
Outcome exact_ks_oracle() {
    const auto t0 = Clock::now();
    std::size_t designs = 0;
    std::size_t values = 0;
    for (std::size_t n = 2; n <= 12; ++n) {
        for (std::size_t n1 = 1; n1 < n; ++n1) {
            const std::size_t n2 = n - n1;
            const auto counts = oracle::ks_null_counts(n1, n2);
            for (const auto& [d, c] : counts) {
                const double dd = d.convert_to<double>();
                const auto mine = ks_exact_pvalue_exact(dd, n1, n2).rational();
                if (mine != oracle::ks_survival(counts, d)) {
                    return {false, "mismatch at n1=" + std::to_string(n1) + " n2=" + std::to_string(n2) +
                                       " d=" + fmt(dd)};
                }
                if (ks_exact_pvalue(dd, n1, n2) != oracle::ks_survival(counts, d).convert_to<double>()) {
                    return {false, "double mismatch at n1=" + std::to_string(n1) + " n2=" + std::to_string(n2)};
                }
                ++values;
            }
            ++designs;
        }
    }
    const double secs = seconds_since(t0);
    return {secs < 10.0, std::to_string(designs) + " designs, " + std::to_string(values) + " values, " + fmt(secs) +
                             " s"};
}

// 2. KS distribution over all 252 labelings is unchanged by monotone transforms.
Outcome distribution_freeness() {
    std::vector<double> base(10);
    for (std::size_t i = 0; i < 10; ++i) {
        base[i] = static_cast<double>(i + 1);
    }
    const std::vector<std::function<double(double)>> transforms{
        [](double x) { return std::exp(x); }, [](double x) { return x * x * x - 40.0; },
        [](double x) { return std::atan(x / 3.0); }, [](double x) { return std::log(x) * 7.0 + 2.0; }};
    const auto labs = oracle::labelings(5, 5);
    if (labs.size() != 252) {
        return {false, "expected 252 labelings"};
    }
    auto distribution = [&](const std::function<double(double)>& f) {
        std::map<std::uint64_t, std::size_t> counts;
        for (const auto& lab : labs) {
            std::vector<double> x;
            std::vector<double> y;
            for (std::size_t i = 0; i < 10; ++i) {
                (lab[i] ? x : y).push_back(f(base[i]));
            }
            ++counts[ks_lattice_statistic(x, y).k];
        }
        return counts;
    };
    const auto reference = distribution([](double x) { return x; });
    for (const auto& f : transforms) {
        if (distribution(f) != reference) {
            return {false, "distribution changed under a monotone transform"};
        }
    }
    return {true, std::to_string(reference.size()) + " distinct statistics, 4 transforms"};
}

// 3. Fisher z of independent pairs at n = 100 has sd 1/sqrt(97).
Outcome fisher_calibration() {
    const auto t0 = Clock::now();
    constexpr std::size_t pairs = 10'000;
    constexpr std::size_t n = 100;
    const auto m = generate_null_matrix(2 * pairs, n, 0.0, 1.0, 20240101);
    std::vector<double> z(pairs);
    for (std::size_t k = 0; k < pairs; ++k) {
        z[k] = fisher_z(pearson(m.row(2 * k), m.row(2 * k + 1)));
    }
    const double sd = stats::sd(z);
    const double target = 1.0 / std::sqrt(97.0);
    const double se = target / std::sqrt(2.0 * (pairs - 1));
    const double secs = seconds_since(t0);
    const bool ok = std::abs(sd - target) <= 3.0 * se && secs < 30.0;
    return {ok, "sd=" + fmt(sd) + " target=" + fmt(target) + " 3SE=" + fmt(3 * se) + ", " + fmt(secs) + " s"};
}

// 4. Increments are unchanged by array-constant noise under a fixed ordering.
Outcome delta_noise_cancellation() {
    ChainSpec spec;
    spec.m = 2000;
    spec.n = 88;
    spec.shared_factor_sd = 1.0;
    spec.seed = 4;
    const auto m = generate_chain_matrix(spec);
    const auto ordering = variance_ordering(m);
    const auto clean = delta_sequence(m, ordering);
    double worst = 0.0;
    for (double sd : {0.1, 1.0, 10.0}) {
        const auto noisy = delta_sequence(add_noise(m, NoiseModel{NoiseKind::array_only, sd}, 99), ordering);
        for (std::size_t i = 0; i < clean.rows(); ++i) {
            for (std::size_t j = 0; j < clean.cols(); ++j) {
                const double a = clean(i, j);
                const double rel = std::abs(noisy(i, j) - a) / std::max(std::abs(a), 1.0);
                worst = std::max(worst, rel);
            }
        }
    }
    return {worst <= 1e-9, "max relative deviation " + fmt(worst)};
}

// 5. Shared-factor matrix: even genes strongly correlated, increments not.
Outcome delta_independence() {
    const auto t0 = Clock::now();
    const auto m = generate_null_matrix(2000, 88, 2.0, 1.0, 5);
    const auto ordering = variance_ordering(m);
    const auto evens = even_position_genes(ordering);
    const double gene_r = all_pairs_summary(m, evens).mean_r;
    const auto d = delta_sequence(m, ordering);
    const double delta_r = all_pairs_summary(d, first_rows(d.rows())).mean_r;
    const double secs = seconds_since(t0);
    const bool ok = gene_r > 0.5 && std::abs(delta_r) <= 0.02 && secs < 120.0;
    return {ok, "even-gene mean r=" + fmt(gene_r) + ", increment mean r=" + fmt(delta_r) + ", " + fmt(secs) + " s"};
}

// 6. Bilinearity on random triples, and planted chains give mostly negative increment covariance.
Outcome triple_identities() {
    const auto m = generate_null_matrix(300, 50, 1.0, 1.0, 6);
    Rng rng = make_rng(6, 1);
    DistinctSubsetSampler<3> sampler(m.genes(), rng);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const auto t = sampler.next();
        const auto s = triple_stats(m, t[0], t[1], t[2]);
        const auto u = m.row(s.ids[0]);
        const auto v = m.row(s.ids[1]);
        const double lhs = stats::covariance(u, s.z2) + s.cov_z1_z2;
        worst = std::max(worst, std::abs(lhs - stats::covariance(v, s.z2)));
    }
    ChainSpec spec;
    spec.m = 1000;
    spec.n = 200;
    spec.shared_factor_sd = 100.0;
    spec.seed = 66;
    const auto chains = generate_chain_matrix(spec);
    const auto census = triple_census(chains, 1000, TripleMode::type_a_only, 0.05, 6);
    const bool ok = worst <= 1e-9 && census.fraction_negative >= 0.9;
    return {ok, "bilinearity max error " + fmt(worst) + ", type-A triples negative " + fmt(census.fraction_negative)};
}

// 7. PFER control with continuous and exact-KS p-values.
Outcome pfer_control() {
    const auto t0 = Clock::now();
    constexpr int panels = 10'000;
    constexpr std::size_t m = 1000;
    std::vector<double> fp(panels);
    std::vector<double> p(m);
    std::uniform_real_distribution<double> unit;
    for (int r = 0; r < panels; ++r) {
        Rng rng = make_rng(7, static_cast<std::uint64_t>(r));
        for (double& v : p) {
            v = unit(rng);
        }
        fp[static_cast<std::size_t>(r)] = static_cast<double>(extended_bonferroni(p, 9.0).rejected.size());
    }
    const double mean = stats::mean(fp);
    const double se = stats::sd(fp) / std::sqrt(static_cast<double>(panels));

    const auto null = generate_null_matrix(2000, 88, 0.0, 1.0, 77);
    InjectionConfig c;
    c.n_modified = 0;
    c.effect_multiplier = 0.0;
    c.replicates = 1000;
    c.pfer = 9.0;
    c.seed = 7;
    const auto ks = effect_injection_experiment(null, c, Mode::delta);
    const double secs = seconds_since(t0);
    const bool ok = std::abs(mean - 9.0) <= 3.0 * se && ks.report.fp_mean <= 9.0 && secs < 120.0;
    return {ok, "uniform mean FP=" + fmt(mean) + " (3SE=" + fmt(3 * se) + "), exact-KS mean FP=" +
                    fmt(ks.report.fp_mean) + ", " + fmt(secs) + " s"};
}

// 8. Increment screening is far more stable than expression screening.
Outcome stability_contrast() {
    const auto t0 = Clock::now();
    const auto m = generate_null_matrix(2000, 88, 1.0, 1.0, 8);
    InjectionConfig c;
    c.replicates = 300;
    c.effect_multiplier = 2.0;
    c.pfer = 9.0;
    c.seed = 8;
    const auto d = effect_injection_experiment(m, c, Mode::delta);
    const auto e = effect_injection_experiment(m, c, Mode::expression);
    const double secs = seconds_since(t0);
    const bool ok = d.report.fp_sd <= e.report.fp_sd / 3.0 && secs < 600.0;
    return {ok, "fp_sd delta=" + fmt(d.report.fp_sd) + " expression=" + fmt(e.report.fp_sd) + " (fp_mean " +
                    fmt(d.report.fp_mean) + " vs " + fmt(e.report.fp_mean) + "), " + fmt(secs) + " s"};
}

// 9. Moving means of independent increments shrink like 1/sqrt(k); identical rows stay flat.
Outcome consistency_trajectory() {
    const auto t0 = Clock::now();
    const auto m = generate_null_matrix(800, 1000, 2.0, 1.0, 9);
    const auto d = delta_sequence(m, variance_ordering(m));
    const auto t = moving_mean_consistency(d, 100, 4);
    const double ratio = t.sd_values[3] / t.sd_values[0];

    RealMatrix shared(400, 1000);
    for (std::size_t i = 0; i < 400; ++i) {
        std::copy(m.row(0).begin(), m.row(0).end(), shared.row(i).begin());
    }
    const auto flat = moving_mean_consistency(shared, 100, 4);
    double spread = 0.0;
    for (double s : flat.sd_values) {
        spread = std::max(spread, std::abs(s - flat.sd_values[0]) / flat.sd_values[0]);
    }
    const double secs = seconds_since(t0);
    const bool ok = ratio >= 0.4 && ratio <= 0.6 && spread <= 1e-12 && secs < 60.0;
    return {ok, "sd(4 step)/sd(step)=" + fmt(ratio) + ", shared-row relative spread " + fmt(spread) + ", " +
                    fmt(secs) + " s"};
}

// 10. Reports are byte-identical across reruns and thread counts.
Outcome determinism() {
    const auto m = generate_chain_matrix(ChainSpec{400, 60, 1.0, 0.5, 5.0, 10, 10, 8.0, 0.25});
    const auto b = generate_chain_matrix(ChainSpec{400, 50, 1.0, 0.5, 5.0, 10, 11, 8.0, 0.25});
    auto run_all = [&](int threads) {
        std::ostringstream out;
        const auto ns = null_split_experiment(m, 20, 20, Mode::delta, 1, threads);
        out << nlohmann::json(ns).dump();
        write_null_split_csv(out, ns);
        const auto jk = jackknife_stability(m, 7, 8, 60, 2, threads);
        out << nlohmann::json(jk).dump();
        write_distances_csv(out, jk);
        InjectionConfig c;
        c.n_modified = 40;
        c.replicates = 50;
        c.seed = 3;
        for (Mode mode : {Mode::delta, Mode::expression}) {
            const auto inj = effect_injection_experiment(m, c, mode, threads);
            out << nlohmann::json(inj.report).dump() << nlohmann::json(inj.manifest).dump();
            write_replicates_csv(out, inj.report);
        }
        const auto mv = moving_mean_consistency(delta_values(m, variance_ordering(m)), 20, 10);
        write_trajectory_csv(out, mv);
        const auto ex = cross_phenotype_exceedance(m, b, Mode::delta, 0.05, threads);
        write_exceedance_csv(out, ex);
        const auto pc = type_a_census(m, 500, 0.05, 4, threads);
        write_pair_census_csv(out, pc, m);
        const auto tc = triple_census(m, 100, TripleMode::any, 0.05, 5, threads);
        write_triple_census_csv(out, tc, m);
        const auto cs = all_pairs_summary(m, first_rows(200), 50, threads);
        out << nlohmann::json(cs).dump();
        write_histogram_csv(out, cs.histogram);
        return out.str();
    };
    const std::string reference = run_all(1);
    for (int threads : {1, 2, 4, 7}) {
        if (run_all(threads) != reference) {
            return {false, "library reports differ at threads=" + std::to_string(threads)};
        }
    }

    // the command-line front end, end to end
    const auto dir = std::filesystem::temp_directory_path() / "deltaseq_acceptance_cli";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    write_matrix(dir / "m.tsv", m);
    std::ostringstream sink;
    auto cli_bytes = [&](const std::string& tag, const std::string& threads) {
        const auto out = dir / tag;
        const int code = cli::run({"exp-inject", "--in", (dir / "m.tsv").string(), "--mode", "delta", "--multiplier",
                                   "2", "--pfer", "9", "--reps", "100", "--seed", "7", "--n-modified", "40",
                                   "--threads", threads, "--out", out.string()},
                                  sink, sink);
        if (code != 0) {
            return std::string("exit ") + std::to_string(code);
        }
        std::string all;
        for (const char* f : {"inject_report.json", "inject_replicates.csv", "inject_manifest.json", "manifest.json"}) {
            std::ifstream in(out / f, std::ios::binary);
            std::ostringstream s;
            s << in.rdbuf();
            all += s.str();
        }
        return all;
    };
    const auto first = cli_bytes("a", "1");
    const bool cli_ok = first == cli_bytes("b", "1") && first == cli_bytes("c", "4");
    std::filesystem::remove_all(dir);
    return {cli_ok, cli_ok ? "library reports and CLI outputs identical for threads 1, 2, 4, 7"
                           : "CLI outputs differ between runs"};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"exact KS p-values equal exhaustive enumeration (n1+n2 <= 12)", exact_ks_oracle},
        {"KS null distribution invariant under monotone transforms (5 vs 5)", distribution_freeness},
        {"Fisher z sd of independent pairs matches 1/sqrt(n-3)", fisher_calibration},
        {"increments invariant under array-constant noise", delta_noise_cancellation},
        {"increments near-uncorrelated where genes are strongly correlated", delta_independence},
        {"triple bilinearity and negative increment covariance on planted chains", triple_identities},
        {"extended Bonferroni controls the expected false-positive count", pfer_control},
        {"increment screening fp_sd at most a third of expression screening", stability_contrast},
        {"moving-mean sd decays for independent rows and stays flat for shared rows", consistency_trajectory},
        {"identical reports across reruns and thread counts", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << ": " << criteria[i].first << " -- "
                  << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
