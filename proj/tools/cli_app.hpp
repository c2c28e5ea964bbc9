#pragma once

#include <deltaseq/deltaseq.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace deltaseq::cli {

inline constexpr const char* tool_version = "deltaseq 1.0.0";

enum ExitCode : int { ok = 0, validation_failure = 1, resource_failure = 2, usage_failure = 64 };

/// Every flag value, after config merging.
struct Options {
    std::string in;
    std::string in_b;
    std::string out = ".";
    std::string config;
    std::string spec;
    std::string mode = "delta";
    std::uint64_t seed = 1;
    int threads = 1;
    double alpha = 0.05;
    double pfer = 9.0;
    double multiplier = 2.0;
    std::size_t reps = 0;
    std::size_t n1 = 10;
    std::size_t n2 = 10;
    std::size_t first_k = 0;
    double d = 0.0;
    std::size_t deleted = 0;
    std::size_t bins = 50;
    std::size_t step = 100;
    std::size_t k_max = 0;
    std::size_t n_modified = 350;
    std::size_t size1 = 0;
    std::size_t size2 = 0;
    bool log2 = false;
    bool no_transform = false;
    bool no_header = false;
    bool any_triples = false;
    bool cdf = false;
};

namespace detail {

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open '" + path.string() + "'");
    }
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

/// Appends config-file entries as flags unless the flag is already present.
inline std::vector<std::string> merge_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        }
    }
    if (path.empty()) {
        return args;
    }
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open config '" + path + "'");
    }
    nlohmann::json config;
    try {
        in >> config;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!config.is_object()) {
        throw ValidationError("config '" + path + "' must hold a JSON object");
    }
    auto present = [&](const std::string& flag) {
        for (const auto& a : args) {
            if (a == flag || a.rfind(flag + "=", 0) == 0) {
                return true;
            }
        }
        return false;
    };
    for (const auto& [key, value] : config.items()) {
        std::string flag = "--" + key;
        std::replace(flag.begin() + 2, flag.end(), '_', '-');
        if (present(flag)) {
            continue;
        }
        if (value.is_boolean()) {
            if (value.get<bool>()) {
                args.push_back(flag);
            }
        } else if (value.is_string()) {
            args.push_back(flag);
            args.push_back(value.get<std::string>());
        } else if (value.is_number()) {
            args.push_back(flag);
            args.push_back(value.dump());
        } else {
            throw ValidationError("config key '" + key + "' must be a scalar");
        }
    }
    return args;
}

} // namespace detail

/// One subcommand invocation: parsed options plus the outputs it writes.
class Session {
public:
    Session(std::string name, Options opts, std::ostream& out) : name_(std::move(name)), o_(std::move(opts)), out_(out) {
        std::filesystem::create_directories(o_.out);
        record_ = nlohmann::json::object();
    }

    const Options& opts() const { return o_; }
    std::ostream& out() { return out_; }

    LoadOptions load_options(const std::string& path) const {
        LoadOptions lo;
        lo.delimiter = std::filesystem::path(path).extension() == ".csv" ? ',' : '\t';
        lo.has_header = !o_.no_header;
        lo.log_scale = !o_.log2;
        return lo;
    }

    ExpressionMatrix load(const std::string& path) {
        if (path.empty()) {
            throw ValidationError(name_ + ": an input matrix is required (--in)");
        }
        inputs_.push_back({{"path", path}, {"sha256", detail::sha256_file(path)}});
        ExpressionMatrix m = load_matrix(path, load_options(path));
        return o_.log2 ? log_transform(m, 2.0) : m;
    }

    void set(const std::string& key, nlohmann::json value) { record_[key] = std::move(value); }

    std::filesystem::path path(const std::string& file) const { return std::filesystem::path(o_.out) / file; }

    void write(const std::string& file, const std::function<void(std::ostream&)>& body) {
        std::ofstream f(path(file), std::ios::binary);
        if (!f) {
            throw ValidationError("cannot write '" + path(file).string() + "'");
        }
        body(f);
        outputs_.push_back(file);
    }

    void write_json(const std::string& file, const nlohmann::json& j) {
        write(file, [&](std::ostream& f) { f << j.dump(2) << '\n'; });
    }

    void finish() {
        nlohmann::json flags{{"in", o_.in},
                             {"in_b", o_.in_b},
                             {"spec", o_.spec},
                             {"mode", o_.mode},
                             {"alpha", o_.alpha},
                             {"pfer", o_.pfer},
                             {"multiplier", o_.multiplier},
                             {"reps", o_.reps},
                             {"n1", o_.n1},
                             {"n2", o_.n2},
                             {"first_k", o_.first_k},
                             {"d", o_.d},
                             {"deleted", o_.deleted},
                             {"bins", o_.bins},
                             {"step", o_.step},
                             {"k_max", o_.k_max},
                             {"n_modified", o_.n_modified},
                             {"size1", o_.size1},
                             {"size2", o_.size2},
                             {"log2", o_.log2},
                             {"no_header", o_.no_header},
                             {"any", o_.any_triples},
                             {"cdf", o_.cdf}};
        nlohmann::json manifest{{"subcommand", name_},
                                {"version", tool_version},
                                {"seed", o_.seed},
                                {"flags", flags},
                                {"resolved", record_},
                                {"inputs", inputs_},
                                {"outputs", outputs_}};
        std::ofstream f(path("manifest.json"), std::ios::binary);
        f << manifest.dump(2) << '\n';
    }

private:
    std::string name_;
    Options o_;
    std::ostream& out_;
    nlohmann::json record_;
    nlohmann::json inputs_ = nlohmann::json::array();
    std::vector<std::string> outputs_;
};

namespace commands {

inline Mode mode_of(const Options& o) { return parse_mode(o.mode); }

inline void check(Session& s) {
    const auto m = s.load(s.opts().in);
    double lo = m(0, 0);
    double hi = lo;
    for (double v : m.values().data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    nlohmann::json j{{"genes", m.genes()}, {"arrays", m.arrays()}, {"min", lo}, {"max", hi}, {"log_scale", m.log_scale()}};
    s.write_json("check.json", j);
    s.out() << "ok: " << m.genes() << " genes x " << m.arrays() << " arrays\n";
}

/// Rows analysed for `mode`: increments, or every gene.
inline RealMatrix analysed_rows(const ExpressionMatrix& m, Mode mode) {
    return mode == Mode::delta ? delta_values(m, variance_ordering(m)) : m.values();
}

inline void corr(Session& s) {
    const auto& o = s.opts();
    const auto m = s.load(o.in);
    const RealMatrix rows = analysed_rows(m, mode_of(o));
    const std::size_t count = o.first_k == 0 ? rows.rows() : std::min(o.first_k, rows.rows());
    const auto subset = first_rows(count);
    const auto r = all_pairs_summary(rows, subset, o.bins, o.threads);
    const auto z = z_summary(rows, subset, o.bins, o.threads);
    s.set("mode", o.mode);
    s.set("rows", count);
    s.set("bins", o.bins);
    s.write_json("corr_summary.json", {{"mode", o.mode}, {"correlation", r}, {"fisher_z", z}});
    s.write("corr_histogram.csv", [&](std::ostream& f) { write_histogram_csv(f, r.histogram); });
    s.write("z_histogram.csv", [&](std::ostream& f) { write_histogram_csv(f, z.histogram); });
    s.out() << "pairs=" << r.pair_count << " mean_r=" << r.mean_r << " sd_z=" << z.sd_z << '\n';
}

inline void order(Session& s) {
    const auto m = s.load(s.opts().in);
    const auto ordering = variance_ordering(m);
    s.write("ordering.csv", [&](std::ostream& f) { write_ordering_csv(f, ordering, m.gene_ids()); });
    s.out() << "ordered " << ordering.size() << " genes\n";
}

inline void delta(Session& s) {
    const auto m = s.load(s.opts().in);
    const auto ordering = variance_ordering(m);
    const auto d = delta_sequence(m, ordering);
    s.write("ordering.csv", [&](std::ostream& f) { write_ordering_csv(f, ordering, m.gene_ids()); });
    s.write("delta.tsv", [&](std::ostream& f) { write_delta(f, d); });
    s.out() << "wrote " << d.rows() << " increments\n";
}

inline void typea(Session& s) {
    const auto& o = s.opts();
    const auto m = s.load(o.in);
    const std::size_t pairs = o.reps == 0 ? 10'000 : o.reps;
    const auto census = type_a_census(m, pairs, o.alpha, o.seed, o.threads);
    s.set("pairs", pairs);
    s.set("alpha", o.alpha);
    s.write_json("typea.json", census);
    s.write("typea.csv", [&](std::ostream& f) { write_pair_census_csv(f, census, m); });
    s.out() << "type_a_fraction=" << census.fraction << '\n';
}

inline void triples(Session& s) {
    const auto& o = s.opts();
    const auto m = s.load(o.in);
    const std::size_t count = o.reps == 0 ? 1'000 : o.reps;
    const auto mode = o.any_triples ? TripleMode::any : TripleMode::type_a_only;
    const auto census = triple_census(m, count, mode, o.alpha, o.seed, o.threads);
    s.set("triples", count);
    s.set("alpha", o.alpha);
    s.set("any", o.any_triples);
    s.write_json("triples.json", census);
    s.write("triples.csv", [&](std::ostream& f) { write_triple_census_csv(f, census, m); });
    s.out() << "fraction_negative=" << census.fraction_negative << '\n';
}

inline void ks(Session& s) {
    const auto& o = s.opts();
    const auto exact = ks_exact_pvalue_exact(o.d, o.n1, o.n2);
    s.set("d", o.d);
    s.set("n1", o.n1);
    s.set("n2", o.n2);
    s.out() << "p=" << deltaseq::detail::format_double(exact.value()) << '\n';
    s.out() << "exact=" << exact.favourable << '/' << exact.total << '\n';
    if (o.cdf) {
        const auto table = ks_exact_cdf(o.n1, o.n2, 1'000'000);
        s.write("ks_cdf.csv", [&](std::ostream& f) { write_cdf_csv(f, table); });
    }
}

inline void screen(Session& s) {
    const auto& o = s.opts();
    const auto a = s.load(o.in);
    const auto b = s.load(o.in_b);
    const auto tests = cross_phenotype_exceedance(a, b, mode_of(o), 0.05, o.threads);
    std::vector<double> p;
    for (const auto& t : tests.tests) {
        p.push_back(t.p_exact);
    }
    const auto report = extended_bonferroni(p, o.pfer);
    s.set("mode", o.mode);
    s.set("pfer", o.pfer);
    s.write_json("screen.json", report);
    s.write("screen.csv", [&](std::ostream& f) { write_rejection_csv(f, report); });
    s.out() << "rejected=" << report.rejected.size() << " of " << report.m << '\n';
}

inline void exp_null(Session& s) {
    const auto& o = s.opts();
    const auto m = s.load(o.in);
    const auto r = null_split_experiment(m, o.n1, o.n2, mode_of(o), o.seed, o.threads);
    s.set("mode", o.mode);
    s.set("n1", o.n1);
    s.set("n2", o.n2);
    s.write_json("null_split.json", r);
    s.write("null_split.csv", [&](std::ostream& f) { write_null_split_csv(f, r); });
    s.out() << "distance=" << r.distance << '\n';
}

inline void exp_jackknife(Session& s) {
    const auto& o = s.opts();
    const auto m = s.load(o.in);
    const std::size_t B = o.reps == 0 ? 100 : o.reps;
    const std::size_t first_k = o.first_k == 0 ? std::min<std::size_t>(150, m.genes() / 2) : o.first_k;
    const std::size_t d = o.deleted == 0 ? m.arrays() / 8 : o.deleted;
    const auto r = jackknife_stability(m, d, B, first_k, o.seed, o.threads);
    s.set("B", B);
    s.set("deleted", d);
    s.set("first_k", first_k);
    s.write_json("jackknife.json", r);
    s.write("jackknife.csv", [&](std::ostream& f) { write_distances_csv(f, r); });
    s.out() << "mean=" << r.mean << " sd=" << r.sd << '\n';
}

inline void exp_inject(Session& s) {
    const auto& o = s.opts();
    const auto m = s.load(o.in);
    InjectionConfig config;
    config.size1 = o.size1;
    config.size2 = o.size2;
    config.n_modified = o.n_modified;
    config.effect_multiplier = o.multiplier;
    config.n1 = o.n1;
    config.n2 = o.n2;
    config.replicates = o.reps == 0 ? 3000 : o.reps;
    config.pfer = o.pfer;
    config.seed = o.seed;
    const auto result = effect_injection_experiment(m, config, mode_of(o), o.threads);
    s.set("mode", o.mode);
    s.set("injection", result.manifest.config);
    s.write_json("inject_report.json", result.report);
    s.write_json("inject_manifest.json", result.manifest);
    s.write("inject_replicates.csv", [&](std::ostream& f) { write_replicates_csv(f, result.report); });
    s.out() << "fp_mean=" << result.report.fp_mean << " fp_sd=" << result.report.fp_sd
            << " fdr_mean=" << result.report.fdr_mean << '\n';
}

inline void exp_moving(Session& s) {
    const auto& o = s.opts();
    const auto m = s.load(o.in);
    const auto ordering = variance_ordering(m);
    const RealMatrix rows = mode_of(o) == Mode::delta ? delta_values(m, ordering)
                                                      : take_rows(m, even_position_genes(ordering));
    const std::size_t k_max = o.k_max == 0 ? rows.rows() / std::max<std::size_t>(o.step, 1) : o.k_max;
    const auto t = moving_mean_consistency(rows, o.step, k_max);
    s.set("mode", o.mode);
    s.set("step", o.step);
    s.set("k_max", k_max);
    s.write_json("trajectory.json", t);
    s.write("trajectory.csv", [&](std::ostream& f) { write_trajectory_csv(f, t); });
    s.out() << "points=" << t.k_values.size() << '\n';
}

inline void exceedance(Session& s) {
    const auto& o = s.opts();
    const auto a = s.load(o.in);
    const auto b = s.load(o.in_b);
    const auto r = cross_phenotype_exceedance(a, b, mode_of(o), o.alpha, o.threads);
    s.set("mode", o.mode);
    s.set("alpha", o.alpha);
    s.write_json("exceedance.json", r);
    s.write("exceedance.csv", [&](std::ostream& f) { write_exceedance_csv(f, r); });
    s.out() << "fraction=" << r.fraction << '\n';
}

/// `--spec` holds {"kind": "chain"|"null", ...} and optionally
/// {"noise": {"kind": "gene_array"|"array_only", "sd": x, "seed": s}}.
inline void synth(Session& s) {
    const auto& o = s.opts();
    if (o.spec.empty()) {
        throw ValidationError("synth: --spec is required");
    }
    std::ifstream in(o.spec);
    if (!in) {
        throw ValidationError("cannot open spec '" + o.spec + "'");
    }
    nlohmann::json spec;
    try {
        in >> spec;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("spec is not valid JSON: ") + e.what());
    }
    const std::string kind = spec.value("kind", "chain");
    std::optional<ExpressionMatrix> m;
    nlohmann::json resolved;
    if (kind == "chain") {
        auto cs = spec.get<ChainSpec>();
        m.emplace(generate_chain_matrix(cs));
        resolved = cs;
    } else if (kind == "null") {
        auto ns = spec.get<NullSpec>();
        m.emplace(generate_null_matrix(ns));
        resolved = ns;
    } else {
        throw ValidationError("unknown synth kind '" + kind + "'");
    }
    if (spec.contains("noise")) {
        const auto& n = spec["noise"];
        NoiseModel model;
        const std::string nk = n.value("kind", "gene_array");
        if (nk == "array_only") {
            model.kind = NoiseKind::array_only;
        } else if (nk != "gene_array") {
            throw ValidationError("unknown noise kind '" + nk + "'");
        }
        model.sd = n.value("sd", 0.0);
        const std::uint64_t noise_seed = n.value("seed", std::uint64_t{0});
        m.emplace(add_noise(*m, model, noise_seed));
        resolved["noise"] = {{"kind", nk}, {"sd", model.sd}, {"seed", noise_seed}};
    }
    s.set("spec", resolved);
    s.write("matrix.tsv", [&](std::ostream& f) { write_matrix(f, *m); });
    s.out() << "wrote " << m->genes() << " x " << m->arrays() << " matrix\n";
}

} // namespace commands

/// Runs one command line; returns the process exit code.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Increment-based analysis of gene expression matrices", "deltaseq"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", tool_version);
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--seed", o.seed, "Master seed");
    app.add_option("--threads", o.threads, "Worker threads (results do not depend on it)")
        ->check(CLI::Range(1, 1024));
    app.add_option("--config", o.config, "JSON file of flag values; explicit flags win");
    app.add_flag("--log2", o.log2, "Log2-transform raw input");
    app.add_flag("--no-transform", o.no_transform, "Input is already on log scale (default)");
    app.add_flag("--no-header", o.no_header, "Input has no header row");

    using Handler = void (*)(Session&);
    std::map<std::string, Handler> handlers;
    auto sub = [&](const char* name, const char* help, Handler h) {
        handlers[name] = h;
        return app.add_subcommand(name, help);
    };
    auto in = [&](CLI::App* c) { c->add_option("--in", o.in, "Input matrix (TSV, or CSV by extension)"); };
    auto in_b = [&](CLI::App* c) { c->add_option("--in-b", o.in_b, "Second input matrix"); };
    auto mode = [&](CLI::App* c) {
        c->add_option("--mode", o.mode, "delta or expression")->check(CLI::IsMember({"delta", "expression"}));
    };

    auto* c_check = sub("check", "Validate and summarise a matrix", commands::check);
    in(c_check);
    auto* c_corr = sub("corr", "Pairwise correlation and Fisher z summaries", commands::corr);
    in(c_corr);
    mode(c_corr);
    c_corr->add_option("--first-k", o.first_k, "Restrict to the first k rows");
    c_corr->add_option("--bins", o.bins, "Histogram bins")->check(CLI::PositiveNumber);
    in(sub("order", "Variance ordering of genes", commands::order));
    in(sub("delta", "Increment matrix and ordering", commands::delta));
    auto* c_typea = sub("typea", "Type-A census over random gene pairs", commands::typea);
    in(c_typea);
    c_typea->add_option("--alpha", o.alpha, "Test level");
    c_typea->add_option("--reps", o.reps, "Number of pairs (default 10000)");
    auto* c_triples = sub("triples", "Triple census of increment covariances", commands::triples);
    in(c_triples);
    c_triples->add_option("--alpha", o.alpha, "Test level");
    c_triples->add_option("--reps", o.reps, "Number of triples (default 1000)");
    c_triples->add_flag("--any", o.any_triples, "Do not require type-A links");
    auto* c_ks = sub("ks", "Exact two-sample KS p-value", commands::ks);
    c_ks->add_option("--d", o.d, "Observed statistic")->required();
    c_ks->add_option("--n1", o.n1, "First sample size")->required();
    c_ks->add_option("--n2", o.n2, "Second sample size")->required();
    c_ks->add_flag("--cdf", o.cdf, "Also write the full null CDF");
    auto* c_screen = sub("screen", "Row-wise KS screen of two groups with PFER control", commands::screen);
    in(c_screen);
    in_b(c_screen);
    mode(c_screen);
    c_screen->add_option("--pfer", o.pfer, "Expected false positives");
    auto* c_null = sub("exp-null", "Null-split KS calibration", commands::exp_null);
    in(c_null);
    mode(c_null);
    c_null->add_option("--n1", o.n1, "First group size");
    c_null->add_option("--n2", o.n2, "Second group size");
    auto* c_jack = sub("exp-jackknife", "Delete-d jackknife stability", commands::exp_jackknife);
    in(c_jack);
    c_jack->add_option("--d", o.deleted, "Arrays deleted per subsample (default n/8)");
    c_jack->add_option("--reps", o.reps, "Subsamples B (default 100)");
    c_jack->add_option("--first-k", o.first_k, "Increment prefix length (default 150)");
    auto* c_inject = sub("exp-inject", "Effect-injection FP/FDR study", commands::exp_inject);
    in(c_inject);
    mode(c_inject);
    c_inject->add_option("--multiplier", o.multiplier, "Effect size in row sd units");
    c_inject->add_option("--pfer", o.pfer, "Expected false positives");
    c_inject->add_option("--reps", o.reps, "Replicates (default 3000)");
    c_inject->add_option("--n1", o.n1, "Arrays drawn from subsample 1");
    c_inject->add_option("--n2", o.n2, "Arrays drawn from subsample 2");
    c_inject->add_option("--n-modified", o.n_modified, "Rows receiving an effect");
    c_inject->add_option("--size1", o.size1, "Subsample 1 size (default n/2)");
    c_inject->add_option("--size2", o.size2, "Subsample 2 size (default rest)");
    auto* c_moving = sub("exp-moving", "Moving-mean consistency trajectory", commands::exp_moving);
    in(c_moving);
    mode(c_moving);
    c_moving->add_option("--step", o.step, "Block size")->check(CLI::PositiveNumber);
    c_moving->add_option("--k-max", o.k_max, "Number of blocks (default all)");
    auto* c_exc = sub("exceedance", "Fraction of rows significant between two matrices", commands::exceedance);
    in(c_exc);
    in_b(c_exc);
    mode(c_exc);
    c_exc->add_option("--alpha", o.alpha, "Test level");
    auto* c_synth = sub("synth", "Generate a synthetic matrix", commands::synth);
    c_synth->add_option("--spec", o.spec, "JSON generator spec");

    try {
        args = detail::merge_config(std::move(args));
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return validation_failure;
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForVersion&) {
        out << tool_version << '\n';
        return ok;
    } catch (const CLI::Success&) {
        out << app.help();
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return usage_failure;
    }
    if (o.log2 && o.no_transform) {
        err << "usage error: --log2 and --no-transform are exclusive\n";
        return usage_failure;
    }

    const auto chosen = app.get_subcommands().front();
    try {
        Session session(chosen->get_name(), o, out);
        handlers.at(chosen->get_name())(session);
        session.finish();
    } catch (const ResourceError& e) {
        err << "resource error: " << e.what() << '\n';
        return resource_failure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return validation_failure;
    }
    return ok;
}

} // namespace deltaseq::cli
