#pragma once

// Command-line front end. Exit codes: 0 success, 2 bad input (flags, config
// files, malformed CSVs), 3 runtime failure (including a failed audit),
// 4 selftest failure.

#include <rlcbf/harness.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace rlcbf {

// Accept both explicit paths and bare names of shipped configs, so
// `run --config pendulum_guide` works from the repository root.
inline std::string resolve_config_path(const std::string& arg) {
    namespace fs = std::filesystem;
    if (fs::exists(arg)) return arg;
    for (const std::string& cand : {arg + ".conf", "configs/" + arg + ".conf"})
        if (fs::exists(cand)) return cand;
    return arg;  // let the loader report the literal path
}

inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"model-free safe control: barrier-filtered actor-critic training"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    uint64_t seed = 0;
    bool verbose = false;

    auto* run = app.add_subcommand("run", "train agents, one per seed");
    run->add_option("--config", config_path, "experiment config file (default config if omitted)");
    run->add_option("--seed", seed, "override the config's seed list with this single seed");
    run->add_option("--out", out_dir, "output directory (default: the config's out_dir)");
    run->add_flag("--verbose", verbose, "also record per-step logs for auditing");

    std::string audit_dir;
    auto* audit = app.add_subcommand("audit", "replay recorded steps through the invariance check");
    audit->add_option("--out", audit_dir, "run directory holding config.resolved and step logs")
        ->required();

    uint64_t selftest_seed = 0;
    auto* self = app.add_subcommand("selftest", "numerical oracles: gp, qp, gradients");
    self->add_option("--seed", selftest_seed, "oracle instance seed");

    std::string agg_out;
    std::vector<std::string> agg_inputs;
    auto* agg = app.add_subcommand("aggregate", "merge per-seed episode CSVs");
    agg->add_option("--out", agg_out, "merged CSV path")->required();
    agg->add_option("inputs", agg_inputs, "episode CSV files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            ExperimentConfig cfg = config_path.empty()
                                       ? parse_config("")
                                       : load_config(resolve_config_path(config_path));
            if (run->count("--seed")) cfg.seeds = {seed};
            if (verbose) cfg.verbose = true;
            const std::string out = out_dir.empty() ? cfg.out_dir : out_dir;
            run_experiment(cfg, out, &std::cout);
        } else if (*audit) {
            const AuditSummary s = audit_run_dir(audit_dir);
            std::printf("episodes %d  steps %d  violations %d  outside_C %d\n", s.episodes,
                        s.steps, s.violations, s.steps_outside_C);
            std::printf("eps_max %.3g  min_h %.6g  degradation_bound %.3g\n", s.eps_max, s.min_h,
                        s.degradation_bound);
            if (s.violations != 0) {
                std::fprintf(stderr, "audit: %d step(s) break the decay certificate\n",
                             s.violations);
                return 3;
            }
        } else if (*self) {
            bool ok = true;
            for (const auto& r : run_selftests(selftest_seed)) {
                std::printf("%-10s %s  worst %.3g  cases %d\n", r.name.c_str(),
                            r.pass ? "pass" : "FAIL", r.worst, r.cases);
                ok = ok && r.pass;
            }
            if (!ok) return 4;
        } else if (*agg) {
            aggregate_csvs(agg_inputs, agg_out);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

}  // namespace rlcbf
