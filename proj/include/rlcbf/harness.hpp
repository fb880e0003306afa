#pragma once

// Experiment orchestration: seed fan-out across threads, post-hoc certificate
// audits of logged runs, and numerical selftests that check the GP posterior,
// the QP solver and every network gradient against independent oracles.

#include <rlcbf/driver.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <thread>

namespace rlcbf {

struct SelftestReport {
    std::string name;
    bool pass = false;
    double worst = 0.0;  // largest observed error, in the suite's own metric
    int cases = 0;
};

// Dense-solve oracle for the GP: same kernel matrix, but factored with full
// pivoting instead of the model's Cholesky, so shared bugs cannot cancel.
inline SelftestReport selftest_gp(uint64_t seed = 0) {
    SelftestReport rep{"gp", true, 0.0, 50};
    std::mt19937_64 rng = make_stream(seed, 100);
    for (int k = 0; k < rep.cases; ++k) {
        const int in_dim = 1 + k % 4;
        const int out_dim = 1 + k % 3;
        const int n = 1 + int(uniform(rng, 0.0, 19.0));
        KernelHyper hy;
        hy.lengthscale = std::exp(uniform(rng, -0.7, 0.7));
        hy.signal_var = std::exp(uniform(rng, -0.7, 0.7));
        hy.noise_var = uniform(rng, 1e-3, 5e-2);

        GpModel model(in_dim, out_dim, hy, 64);
        std::vector<Vec> xs;
        Mat Y(n, out_dim);
        for (int i = 0; i < n; ++i) {
            Vec x(in_dim), d(out_dim);
            for (int j = 0; j < in_dim; ++j) x[j] = uniform(rng, -2.0, 2.0);
            for (int j = 0; j < out_dim; ++j) d[j] = gaussian(rng, 0.0, 1.0);
            xs.push_back(x);
            Y.row(i) = d.transpose();
            model.add({x, d});
        }
        model.refit();

        Mat A(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double r2 = (xs[size_t(i)] - xs[size_t(j)]).squaredNorm();
                A(i, j) = hy.signal_var * std::exp(-r2 / (2.0 * hy.lengthscale * hy.lengthscale));
            }
        A.diagonal().array() += hy.noise_var + model.jitter_used();
        Eigen::FullPivLU<Mat> lu(A);

        Vec x_star(in_dim);
        for (int j = 0; j < in_dim; ++j) x_star[j] = uniform(rng, -2.0, 2.0);
        Vec ks(n);
        for (int i = 0; i < n; ++i) {
            double r2 = (xs[size_t(i)] - x_star).squaredNorm();
            ks[i] = hy.signal_var * std::exp(-r2 / (2.0 * hy.lengthscale * hy.lengthscale));
        }
        Vec mu_o = (ks.transpose() * lu.solve(Y)).transpose();
        double var_o = hy.signal_var - ks.dot(lu.solve(ks));
        double sig_o = std::sqrt(std::clamp(var_o, 0.0, hy.signal_var));

        Vec mu;
        double sig;
        model.predict(x_star, mu, sig);
        double err = std::max((mu - mu_o).cwiseAbs().maxCoeff(), std::abs(sig - sig_o));
        rep.worst = std::max(rep.worst, err);
    }
    rep.pass = rep.worst <= 1e-8;
    return rep;
}

// Random feasibility/saturation mixes with 1-3 rows, judged two ways: the
// solver's KKT residual at the returned point, and an exhaustive grid sweep
// of the box. For a fixed action the optimal shared slack is explicit, so
// every grid point is scored exactly and an exact solver never loses to one.
inline SelftestReport selftest_qp(uint64_t seed = 0) {
    SelftestReport rep{"qp", true, 0.0, 200};
    std::mt19937_64 rng = make_stream(seed, 101);
    for (int k = 0; k < rep.cases; ++k) {
        const int n = 1 + k % 3;
        const int m = 1 + (k / 3) % 3;
        QpSpec spec;
        spec.box_low = Vec(n);
        spec.box_high = Vec(n);
        for (int i = 0; i < n; ++i) {
            spec.box_low[i] = -uniform(rng, 0.5, 3.0);
            spec.box_high[i] = uniform(rng, 0.5, 3.0);
        }
        spec.slack_weight = std::pow(10.0, uniform(rng, 4.0, 12.0));
        for (int r = 0; r < m; ++r) {
            Vec c(n);
            for (int i = 0; i < n; ++i) c[i] = gaussian(rng, 0.0, 1.0);
            spec.rows.emplace_back(c, uniform(rng, -2.0, 2.0));
        }

        auto objective = [&](const Vec& a) {
            double viol = 0.0;
            for (const auto& row : spec.rows) viol = std::max(viol, row.second - row.first.dot(a));
            return 0.5 * a.squaredNorm() + spec.slack_weight * viol;
        };

        const int pts = n == 1 ? 2001 : (n == 2 ? 101 : 31);
        std::vector<int> idx(size_t(n), 0);
        Vec a(n);
        double grid_best = std::numeric_limits<double>::infinity();
        while (true) {
            for (int i = 0; i < n; ++i)
                a[i] = spec.box_low[i] +
                       (spec.box_high[i] - spec.box_low[i]) * idx[size_t(i)] / (pts - 1);
            grid_best = std::min(grid_best, objective(a));
            int i = 0;
            while (i < n && ++idx[size_t(i)] == pts) idx[size_t(i++)] = 0;
            if (i == n) break;
        }

        QpSolution sol = solve_qp(spec);
        bool finite = sol.a.allFinite() && std::isfinite(sol.eps) && sol.eps >= -1e-12;
        if (!finite) rep.pass = false;
        const double excess =
            (objective(sol.a) - grid_best) / std::max(1.0, std::abs(grid_best));
        rep.worst = std::max({rep.worst, sol.kkt.max_residual, excess});
    }
    rep.pass = rep.pass && rep.worst <= 1e-7;
    return rep;
}

// Central finite differences over every parameter of the three network shapes
// used in training (actor, critic, compensator).
inline SelftestReport selftest_gradients(uint64_t seed = 0) {
    SelftestReport rep{"gradients", true, 0.0, 0};
    std::mt19937_64 rng = make_stream(seed, 102);

    struct Shape {
        std::vector<int> sizes;
        OutputActivation act;
        double scale;
    };
    const std::vector<Shape> shapes = {
        {{3, 16, 16, 2}, OutputActivation::scaled_tanh, 3.0},   // actor-like
        {{5, 24, 1}, OutputActivation::identity, 1.0},          // critic-like
        {{2, 12, 12, 1}, OutputActivation::scaled_tanh, 20.0},  // compensator-like
    };

    for (const auto& sh : shapes) {
        Mlp net = Mlp::init(sh.sizes, sh.act, sh.scale, rng);
        const int B = 6;
        Mat X(sh.sizes.front(), B), Y(sh.sizes.back(), B);
        for (int i = 0; i < X.size(); ++i) X.data()[i] = gaussian(rng, 0.0, 1.0);
        for (int i = 0; i < Y.size(); ++i) Y.data()[i] = gaussian(rng, 0.0, 1.0);

        auto loss = [&]() { return (net.forward(X) - Y).squaredNorm() / B; };
        Mlp::ForwardCache cache;
        Mat pred = net.forward_cached(X, cache);
        MlpGrads grads = net.backward(cache, (2.0 / B) * (pred - Y));

        const double h = 1e-5;
        auto check = [&](double& param, double analytic) {
            const double save = param;
            param = save + h;
            const double lp = loss();
            param = save - h;
            const double lm = loss();
            param = save;
            const double fd = (lp - lm) / (2.0 * h);
            rep.worst = std::max(rep.worst, std::abs(fd - analytic) / std::max(1.0, std::abs(fd)));
            ++rep.cases;
        };
        for (size_t l = 0; l < net.W.size(); ++l) {
            for (int i = 0; i < net.W[l].size(); ++i)
                check(net.W[l].data()[i], grads.dW[l].data()[i]);
            for (int i = 0; i < net.b[l].size(); ++i) check(net.b[l][i], grads.db[l][i]);
        }
    }
    rep.pass = rep.worst <= 1e-4;
    return rep;
}

inline std::vector<SelftestReport> run_selftests(uint64_t seed = 0) {
    return {selftest_gp(seed), selftest_qp(seed), selftest_gradients(seed)};
}

struct AuditSummary {
    int episodes = 0;
    int steps = 0;
    int violations = 0;        // steps breaking h' >= (1-eta) h - eps
    int steps_outside_C = 0;   // visited states with min_i h_i < 0
    double eps_max = 0.0;
    double min_h = std::numeric_limits<double>::infinity();
    double degradation_bound = 0.0;  // eps_max / min eta: how deep C_eps can dip
};

// Replay every episode recorded under `dir` through the invariance check,
// using the barriers of the run's own resolved config.
inline AuditSummary audit_run_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path cfg_path = fs::path(dir) / "config.resolved";
    if (!fs::exists(cfg_path))
        throw ConfigError("audit: no config.resolved under '" + dir + "'");
    const ExperimentConfig cfg = load_config(cfg_path.string());
    const auto env = make_env(cfg);
    const auto barriers = make_barriers(cfg, *env);
    const int sdim = env->state_dim();

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("seed", 0) == 0 && name.find("_steps.csv") != std::string::npos)
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw ConfigError("audit: no seed*_steps.csv under '" + dir +
                          "' (record runs with verbose = true)");

    AuditSummary sum;
    for (const auto& file : files) {
        const CsvTable t = read_csv(file.string());
        const int col_ep = t.column("episode");
        const int col_eps = t.column("eps");
        std::vector<int> s_cols(static_cast<size_t>(sdim), 0);
        std::vector<int> sn_cols(static_cast<size_t>(sdim), 0);
        for (int i = 0; i < sdim; ++i) {
            s_cols[size_t(i)] = t.column("s" + std::to_string(i));
            sn_cols[size_t(i)] = t.column("sn" + std::to_string(i));
        }
        auto state_at = [&](size_t row, const std::vector<int>& cols) {
            Vec s(sdim);
            for (int i = 0; i < sdim; ++i) s[i] = t.rows[row][size_t(cols[size_t(i)])];
            return s;
        };

        size_t r = 0;
        while (r < t.rows.size()) {
            const double ep = t.rows[r][size_t(col_ep)];
            std::vector<Vec> states = {state_at(r, s_cols)};
            std::vector<double> eps;
            while (r < t.rows.size() && t.rows[r][size_t(col_ep)] == ep) {
                states.push_back(state_at(r, sn_cols));
                eps.push_back(t.rows[r][size_t(col_eps)]);
                ++r;
            }
            const AuditReport rep = invariance_audit(states, eps, barriers);
            ++sum.episodes;
            sum.steps += rep.steps;
            sum.violations += rep.violations;
            sum.steps_outside_C += rep.steps_outside_C;
            sum.eps_max = std::max(sum.eps_max, rep.eps_max);
            sum.min_h = std::min(sum.min_h, rep.min_h);
            sum.degradation_bound = std::max(sum.degradation_bound, rep.degradation_bound);
        }
    }
    return sum;
}

// One training run per seed, fanned out to threads; artifacts land in one
// directory, merged into aggregate.csv at the end.
inline void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                           std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "config.resolved") << serialize_config(cfg);

    std::vector<std::exception_ptr> errors(cfg.seeds.size());
    std::vector<std::thread> workers;
    workers.reserve(cfg.seeds.size());
    for (size_t i = 0; i < cfg.seeds.size(); ++i)
        workers.emplace_back([&cfg, &out_dir, &errors, i] {
            try {
                Driver(cfg, cfg.seeds[i]).train(out_dir);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
    for (auto& w : workers) w.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<std::string> ep_files;
    for (uint64_t s : cfg.seeds)
        ep_files.push_back(
            (fs::path(out_dir) / ("seed" + std::to_string(s) + "_episodes.csv")).string());
    aggregate_csvs(ep_files, (fs::path(out_dir) / "aggregate.csv").string());
    if (log)
        *log << "completed " << cfg.seeds.size() << " seed(s), " << cfg.episodes
             << " episodes each -> " << out_dir << "\n";
}

}  // namespace rlcbf
