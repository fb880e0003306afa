#pragma once

// Experiment configuration: a flat `key = value` text format with env-dependent
// defaults. Parsing collects every complaint before throwing so a bad file is
// fixed in one round trip, and serialize_config(parse_config(s)) is lossless.

#include <rlcbf/cbf.hpp>
#include <rlcbf/csv.hpp>
#include <rlcbf/env.hpp>
#include <rlcbf/gp.hpp>
#include <rlcbf/rl.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace rlcbf {

struct ExperimentConfig {
    std::string env = "pendulum";
    std::string mode = "baseline";  // baseline | compensate | guide
    int episodes = 150;
    std::vector<uint64_t> seeds = {0};
    std::string out_dir = "out";
    bool verbose = false;
    bool oracle_dynamics = false;  // nominal model := true parameters, model uncertainty off

    double dt = 0.05;
    int horizon = 200;
    double eta = 0.5;
    double k_delta = 2.0;
    double qp_slack_weight = 1e12;

    double gp_lengthscale = 1.0;
    double gp_signal_var = 1.0;
    // The residual the GP sees is state-only by construction, but the plant's
    // input-matrix error makes the measured targets depend on the applied
    // action too. That spread is irreducible noise for a state-only model, so
    // the noise floor must absorb it; starving it (~0.02) makes the posterior
    // mean explain action variance as state structure, and the resulting
    // overshoot (|mu| far beyond any realizable residual) poisons the filter.
    double gp_noise_var = 0.5;
    int gp_window = 1000;

    AgentConfig agent;

    std::vector<int> comp_hidden = {64, 64};
    double comp_lr = 1e-3;
    int comp_updates = 200;  // minibatch steps per episode (warm-started)
    int comp_batch = 64;

    double pend_gamma_v = 0.25;
    double car_sigma_a = 0.5;
    double car_tau = 0.5;

    std::vector<AffineBarrier> barriers;  // empty: use the environment's defaults

    bool operator==(const ExperimentConfig&) const = default;
};

namespace cfgdetail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline bool to_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end != s.c_str() && *end == '\0';
}

inline bool to_int(const std::string& s, int& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') return false;
    out = int(v);
    return true;
}

inline bool to_u64(const std::string& s, uint64_t& out) {
    if (s.empty() || s[0] == '-') return false;
    char* end = nullptr;
    out = std::strtoull(s.c_str(), &end, 10);
    return end != s.c_str() && *end == '\0';
}

inline bool to_bool(const std::string& s, bool& out) {
    if (s == "true" || s == "1") {
        out = true;
        return true;
    }
    if (s == "false" || s == "0") {
        out = false;
        return true;
    }
    return false;
}

struct KeyValue {
    int line;
    std::string key, value;
};

}  // namespace cfgdetail

inline ExperimentConfig default_config(const std::string& env) {
    ExperimentConfig cfg;
    cfg.env = env;
    if (env == "car") {
        cfg.episodes = 200;
        cfg.dt = 0.1;
        cfg.horizon = 300;
        cfg.gp_lengthscale = 5.0;
        cfg.gp_noise_var = 0.01;
    }
    return cfg;
}

inline int env_state_dim(const std::string& env) { return env == "car" ? 10 : 2; }

inline std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
    std::vector<std::string> errs;
    auto bad = [&errs](const std::string& m) { errs.push_back(m); };

    if (cfg.env != "pendulum" && cfg.env != "car")
        bad("env must be 'pendulum' or 'car', got '" + cfg.env + "'");
    if (cfg.mode != "baseline" && cfg.mode != "compensate" && cfg.mode != "guide")
        bad("mode must be baseline, compensate or guide, got '" + cfg.mode + "'");
    if (cfg.episodes < 1) bad("episodes must be >= 1, got " + std::to_string(cfg.episodes));
    if (cfg.seeds.empty()) bad("seeds must not be empty");
    if (!(cfg.dt > 0)) bad("dt must be > 0");
    if (cfg.horizon < 1) bad("horizon must be >= 1");
    if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0))
        bad("eta must lie in [0,1], got " + fmt_g17(cfg.eta));
    if (!(cfg.k_delta >= 0)) bad("k_delta must be >= 0");
    if (!(cfg.qp_slack_weight > 0)) bad("qp_slack_weight must be > 0");
    if (!(cfg.gp_lengthscale > 0)) bad("gp_lengthscale must be > 0");
    if (!(cfg.gp_signal_var > 0)) bad("gp_signal_var must be > 0");
    if (!(cfg.gp_noise_var >= 0)) bad("gp_noise_var must be >= 0");
    if (cfg.gp_window < 1) bad("gp_window must be >= 1");
    try {
        cfg.agent.validate();
    } catch (const ConfigError& e) {
        bad(e.what());
    }
    if (cfg.comp_hidden.empty()) bad("comp_hidden must not be empty");
    for (int h : cfg.comp_hidden)
        if (h < 1) bad("comp_hidden layers must be >= 1");
    if (!(cfg.comp_lr > 0)) bad("comp_lr must be > 0");
    if (cfg.comp_updates < 0) bad("comp_updates must be >= 0");
    if (cfg.comp_batch < 1) bad("comp_batch must be >= 1");
    if (!(cfg.pend_gamma_v >= 0)) bad("pend_gamma_v must be >= 0");
    if (!(cfg.car_sigma_a >= 0)) bad("car_sigma_a must be >= 0");
    if (!(cfg.car_tau >= 0)) bad("car_tau must be >= 0");
    const int sdim = env_state_dim(cfg.env);
    for (size_t i = 0; i < cfg.barriers.size(); ++i)
        if (cfg.barriers[i].p.size() != sdim)
            bad("barrier " + std::to_string(i + 1) + ": p has " +
                std::to_string(cfg.barriers[i].p.size()) + " components, state is " +
                std::to_string(sdim) + "-dimensional");
    return errs;
}

inline ExperimentConfig parse_config(const std::string& text) {
    using namespace cfgdetail;
    std::vector<std::string> errs;
    std::vector<KeyValue> pairs;
    std::map<std::string, int> seen;  // key -> first line

    {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            size_t eq = t.find('=');
            if (eq == std::string::npos) {
                errs.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
                continue;
            }
            KeyValue kv{lineno, trim(t.substr(0, eq)), trim(t.substr(eq + 1))};
            if (kv.key.empty()) {
                errs.push_back("line " + std::to_string(lineno) + ": empty key");
                continue;
            }
            auto [it, fresh] = seen.emplace(kv.key, lineno);
            if (!fresh) {
                errs.push_back("line " + std::to_string(lineno) + ": duplicate key '" + kv.key +
                               "' (first set on line " + std::to_string(it->second) + ")");
                continue;
            }
            pairs.push_back(std::move(kv));
        }
    }

    // env decides the defaults, so resolve it before anything else
    std::string env = "pendulum";
    for (const auto& kv : pairs)
        if (kv.key == "env") env = kv.value;
    ExperimentConfig cfg = default_config(env == "car" ? "car" : "pendulum");
    cfg.env = env;

    std::map<int, std::pair<int, std::string>> barrier_lines;  // index -> (line, value)

    for (const auto& kv : pairs) {
        auto fail = [&errs, &kv](const std::string& what) {
            errs.push_back("line " + std::to_string(kv.line) + ": " + kv.key + ": " + what +
                           ", got '" + kv.value + "'");
        };
        auto set_d = [&](double& dst) {
            if (!to_double(kv.value, dst)) fail("expected a number");
        };
        auto set_i = [&](int& dst) {
            if (!to_int(kv.value, dst)) fail("expected an integer");
        };
        auto set_b = [&](bool& dst) {
            if (!to_bool(kv.value, dst)) fail("expected true or false");
        };
        auto set_ilist = [&](std::vector<int>& dst) {
            std::vector<int> vals;
            for (const auto& tok : split(kv.value, ',')) {
                int v;
                if (!to_int(tok, v)) {
                    fail("expected comma-separated integers");
                    return;
                }
                vals.push_back(v);
            }
            dst = std::move(vals);
        };

        const std::string& k = kv.key;
        if (k == "env") {
            // validated later; keep whatever was written so the message can quote it
        } else if (k == "mode") {
            cfg.mode = kv.value;
        } else if (k == "episodes") {
            set_i(cfg.episodes);
        } else if (k == "seeds") {
            std::vector<uint64_t> vals;
            bool ok = true;
            for (const auto& tok : split(kv.value, ',')) {
                uint64_t v;
                if (!to_u64(tok, v)) {
                    fail("expected comma-separated non-negative integers");
                    ok = false;
                    break;
                }
                vals.push_back(v);
            }
            if (ok) cfg.seeds = std::move(vals);
        } else if (k == "out_dir") {
            cfg.out_dir = kv.value;
        } else if (k == "verbose") {
            set_b(cfg.verbose);
        } else if (k == "oracle_dynamics") {
            set_b(cfg.oracle_dynamics);
        } else if (k == "dt") {
            set_d(cfg.dt);
        } else if (k == "horizon") {
            set_i(cfg.horizon);
        } else if (k == "eta") {
            set_d(cfg.eta);
        } else if (k == "k_delta") {
            set_d(cfg.k_delta);
        } else if (k == "qp_slack_weight") {
            set_d(cfg.qp_slack_weight);
        } else if (k == "gp_lengthscale") {
            set_d(cfg.gp_lengthscale);
        } else if (k == "gp_signal_var") {
            set_d(cfg.gp_signal_var);
        } else if (k == "gp_noise_var") {
            set_d(cfg.gp_noise_var);
        } else if (k == "gp_window") {
            set_i(cfg.gp_window);
        } else if (k == "gamma") {
            set_d(cfg.agent.gamma);
        } else if (k == "tau_target") {
            set_d(cfg.agent.tau_target);
        } else if (k == "batch") {
            set_i(cfg.agent.batch);
        } else if (k == "buffer_capacity") {
            set_i(cfg.agent.buffer_capacity);
        } else if (k == "noise_std_init") {
            set_d(cfg.agent.noise_std_init);
        } else if (k == "noise_std_final") {
            set_d(cfg.agent.noise_std_final);
        } else if (k == "actor_lr") {
            set_d(cfg.agent.actor_lr);
        } else if (k == "critic_lr") {
            set_d(cfg.agent.critic_lr);
        } else if (k == "actor_hidden") {
            set_ilist(cfg.agent.actor_hidden);
        } else if (k == "critic_hidden") {
            set_ilist(cfg.agent.critic_hidden);
        } else if (k == "comp_hidden") {
            set_ilist(cfg.comp_hidden);
        } else if (k == "comp_lr") {
            set_d(cfg.comp_lr);
        } else if (k == "comp_updates") {
            set_i(cfg.comp_updates);
        } else if (k == "comp_batch") {
            set_i(cfg.comp_batch);
        } else if (k == "pend_gamma_v") {
            set_d(cfg.pend_gamma_v);
        } else if (k == "car_sigma_a") {
            set_d(cfg.car_sigma_a);
        } else if (k == "car_tau") {
            set_d(cfg.car_tau);
        } else if (k.rfind("barrier.", 0) == 0) {
            int idx;
            if (!to_int(k.substr(8), idx) || idx < 1)
                errs.push_back("line " + std::to_string(kv.line) + ": bad barrier index in '" +
                               k + "'");
            else
                barrier_lines[idx] = {kv.line, kv.value};
        } else {
            errs.push_back("line " + std::to_string(kv.line) + ": unknown key '" + k + "'");
        }
    }

    // barrier.N = p_1 .. p_D q eta, numbered contiguously from 1
    if (!barrier_lines.empty()) {
        const int sdim = env_state_dim(cfg.env);
        int expect = 1;
        for (const auto& [idx, lv] : barrier_lines) {
            const auto& [lineno, value] = lv;
            if (idx != expect) {
                errs.push_back("barrier indices must be contiguous from 1; found barrier." +
                               std::to_string(idx) + " but not barrier." + std::to_string(expect));
                break;
            }
            ++expect;
            std::vector<double> vals;
            bool ok = true;
            std::istringstream toks(value);
            std::string tok;
            while (toks >> tok) {
                double v;
                if (!cfgdetail::to_double(tok, v)) {
                    errs.push_back("line " + std::to_string(lineno) + ": barrier." +
                                   std::to_string(idx) + ": non-numeric entry '" + tok + "'");
                    ok = false;
                    break;
                }
                vals.push_back(v);
            }
            if (!ok) continue;
            if (int(vals.size()) != sdim + 2) {
                errs.push_back("line " + std::to_string(lineno) + ": barrier." +
                               std::to_string(idx) + ": expected " + std::to_string(sdim + 2) +
                               " values (p[" + std::to_string(sdim) + "], q, eta), got " +
                               std::to_string(vals.size()));
                continue;
            }
            Vec p = Eigen::Map<const Vec>(vals.data(), sdim);
            try {
                cfg.barriers.emplace_back(p, vals[size_t(sdim)], vals[size_t(sdim) + 1]);
            } catch (const ConfigError& e) {
                errs.push_back("line " + std::to_string(lineno) + ": barrier." +
                               std::to_string(idx) + ": " + e.what());
            }
        }
    }

    for (const auto& e : validate_config(cfg)) errs.push_back(e);

    if (!errs.empty()) {
        std::string joined = "config:";
        for (const auto& e : errs) joined += "\n  " + e;
        throw ConfigError(joined);
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    auto kv = [&out](const std::string& k, const std::string& v) { out << k << " = " << v << "\n"; };
    auto kd = [&](const std::string& k, double v) { kv(k, fmt_shortest(v)); };
    auto ki = [&](const std::string& k, int v) { kv(k, std::to_string(v)); };
    auto kb = [&](const std::string& k, bool v) { kv(k, v ? "true" : "false"); };
    auto klist = [&](const std::string& k, const std::vector<int>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        kv(k, s);
    };

    kv("env", cfg.env);
    kv("mode", cfg.mode);
    ki("episodes", cfg.episodes);
    {
        std::string s;
        for (size_t i = 0; i < cfg.seeds.size(); ++i)
            s += (i ? "," : "") + std::to_string(cfg.seeds[i]);
        kv("seeds", s);
    }
    kv("out_dir", cfg.out_dir);
    kb("verbose", cfg.verbose);
    kb("oracle_dynamics", cfg.oracle_dynamics);
    kd("dt", cfg.dt);
    ki("horizon", cfg.horizon);
    kd("eta", cfg.eta);
    kd("k_delta", cfg.k_delta);
    kd("qp_slack_weight", cfg.qp_slack_weight);
    kd("gp_lengthscale", cfg.gp_lengthscale);
    kd("gp_signal_var", cfg.gp_signal_var);
    kd("gp_noise_var", cfg.gp_noise_var);
    ki("gp_window", cfg.gp_window);
    kd("gamma", cfg.agent.gamma);
    kd("tau_target", cfg.agent.tau_target);
    ki("batch", cfg.agent.batch);
    ki("buffer_capacity", cfg.agent.buffer_capacity);
    kd("noise_std_init", cfg.agent.noise_std_init);
    kd("noise_std_final", cfg.agent.noise_std_final);
    kd("actor_lr", cfg.agent.actor_lr);
    kd("critic_lr", cfg.agent.critic_lr);
    klist("actor_hidden", cfg.agent.actor_hidden);
    klist("critic_hidden", cfg.agent.critic_hidden);
    klist("comp_hidden", cfg.comp_hidden);
    kd("comp_lr", cfg.comp_lr);
    ki("comp_updates", cfg.comp_updates);
    ki("comp_batch", cfg.comp_batch);
    kd("pend_gamma_v", cfg.pend_gamma_v);
    kd("car_sigma_a", cfg.car_sigma_a);
    kd("car_tau", cfg.car_tau);
    for (size_t i = 0; i < cfg.barriers.size(); ++i) {
        std::string s;
        for (int j = 0; j < cfg.barriers[i].p.size(); ++j)
            s += fmt_shortest(cfg.barriers[i].p[j]) + " ";
        s += fmt_shortest(cfg.barriers[i].q) + " " + fmt_shortest(cfg.barriers[i].eta);
        kv("barrier." + std::to_string(i + 1), s);
    }
    return out.str();
}

// The environment an experiment runs in. oracle_dynamics collapses the nominal
// model onto the true parameters, which also zeroes the learned residual.
inline std::unique_ptr<Env> make_env(const ExperimentConfig& cfg) {
    if (cfg.env == "pendulum") {
        PendulumParams p;
        p.dt = cfg.dt;
        p.horizon = cfg.horizon;
        p.eta = cfg.eta;
        p.gamma_v = cfg.pend_gamma_v;
        if (cfg.oracle_dynamics) {
            p.m_nom = p.m_true;
            p.l_nom = p.l_true;
        }
        return std::make_unique<PendulumEnv>(p);
    }
    if (cfg.env == "car") {
        CarParams c;
        c.dt = cfg.dt;
        c.horizon = cfg.horizon;
        c.eta = cfg.eta;
        c.sigma_a = cfg.car_sigma_a;
        c.tau = cfg.car_tau;
        if (cfg.oracle_dynamics) {
            c.kp_nom = c.kp;
            c.kb_nom = c.kb;
            c.kd_nom = c.kd;
        }
        return std::make_unique<CarEnv>(c);
    }
    throw ConfigError("make_env: unknown environment '" + cfg.env + "'");
}

inline std::vector<AffineBarrier> make_barriers(const ExperimentConfig& cfg, const Env& env) {
    return cfg.barriers.empty() ? env.default_barriers() : cfg.barriers;
}

inline GpModel make_gp(const ExperimentConfig& cfg, const Env& env) {
    KernelHyper hyper;
    hyper.lengthscale = cfg.gp_lengthscale;
    hyper.signal_var = cfg.gp_signal_var;
    hyper.noise_var = cfg.gp_noise_var;
    return GpModel(env.feature_dim(), env.state_dim(), hyper, size_t(cfg.gp_window));
}

}  // namespace rlcbf
