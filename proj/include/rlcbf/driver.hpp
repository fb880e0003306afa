#pragma once

// The training loop: episodes of act -> filter -> step, followed by a model
// refit, a compensator fit and a block of off-policy agent updates. Every
// random draw comes from a stream keyed off the master seed, so a run is a
// pure function of (config, seed) and its artifacts are byte-reproducible.

#include <rlcbf/config.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace rlcbf {

enum class Mode { baseline, compensate, guide };

inline Mode mode_from_string(const std::string& m) {
    if (m == "baseline") return Mode::baseline;
    if (m == "compensate") return Mode::compensate;
    if (m == "guide") return Mode::guide;
    throw ConfigError("mode must be baseline, compensate or guide, got '" + m + "'");
}

// Exploration noise as a fraction of the action half-width, decayed linearly
// from the first to the last episode.
inline double noise_std_fraction(const AgentConfig& a, int episode, int total_episodes) {
    if (total_episodes <= 1) return a.noise_std_init;
    const double t = double(episode) / double(total_episodes - 1);
    return a.noise_std_init + (a.noise_std_final - a.noise_std_init) * t;
}

struct EpisodeLog {
    std::vector<Vec> states;               // horizon + 1 entries
    std::vector<Vec> h;                    // barrier values at each visited state
    std::vector<Vec> u_rl, u_bar, u_cbf;   // horizon entries each
    std::vector<double> eps, rewards;

    double ret = 0.0;
    double max_eps = 0.0;
    double mean_ucbf = 0.0;
    double min_h = std::numeric_limits<double>::infinity();
    double worst_metric = 0.0;  // max |theta| or min headway, over all visited states
    bool unsafe = false;
};

struct TrainResult {
    std::vector<EpisodeRow> episodes;
    // prequential residual coverage: fraction of realized residual components
    // that landed inside the mu +- k_delta sigma band used at that step
    uint64_t band_hits = 0, band_total = 0;

    double coverage() const {
        return band_total == 0 ? 1.0 : double(band_hits) / double(band_total);
    }
};

// Deployed-vs-proposed evaluation. The proposed controller is the deployed one
// minus its filter correction; rollouts keep the filter on (so they stay safe)
// and the proposed return prices the unfiltered action along that trajectory.
// The two returns coincide exactly wherever the correction is zero.
struct PolicyEvalReport {
    double deployed_return = 0.0;
    double proposed_return = 0.0;
    double mean_ucbf = 0.0;
};

class Driver {
  public:
    Driver(ExperimentConfig cfg, uint64_t seed)
        : cfg_(validated(std::move(cfg))),
          seed_(seed),
          mode_(mode_from_string(cfg_.mode)),
          env_(make_env(cfg_)),
          nominal_(env_->nominal()),
          barriers_(make_barriers(cfg_, *env_)),
          gp_(make_gp(cfg_, *env_)),
          rng_agent_(make_stream(seed, 0)),
          rng_comp_(make_stream(seed, 1)),
          rng_env_(make_stream(seed, 2)),
          rng_noise_(make_stream(seed, 3)),
          rng_init_(make_stream(seed, 4)),
          rng_replay_(make_stream(seed, 5)),
          rng_compfit_(make_stream(seed, 6)),
          agent_(env_->state_dim(), env_->action_dim(), env_->action_low(), env_->action_high(),
                 cfg_.agent, rng_agent_),
          replay_(size_t(cfg_.agent.buffer_capacity)) {
        // the compensator accumulates CBF corrections, so its range is the
        // whole actuator span; zeroed output = "no previous controllers yet"
        const double span = (env_->action_high() - env_->action_low()).maxCoeff();
        std::vector<int> sizes = {env_->state_dim()};
        sizes.insert(sizes.end(), cfg_.comp_hidden.begin(), cfg_.comp_hidden.end());
        sizes.push_back(env_->action_dim());
        comp_ = Mlp::init(sizes, OutputActivation::scaled_tanh, span, rng_comp_);
        comp_.zero_output_layer();
        comp_opt_ = AdamState(comp_, cfg_.comp_lr);
    }

    const ExperimentConfig& config() const { return cfg_; }
    const Env& env() const { return *env_; }
    const std::vector<AffineBarrier>& barriers() const { return barriers_; }
    const GpModel& gp() const { return gp_; }
    DdpgAgent& agent() { return agent_; }
    const Mlp& compensator() const { return comp_; }
    size_t comp_pairs() const { return comp_data_.size(); }

    // Committed compensator output; identically zero outside guide mode.
    Vec u_bar(const Vec& s) const {
        if (mode_ != Mode::guide) return Vec::Zero(env_->action_dim());
        Mat col(s.size(), 1);
        col.col(0) = s;
        return comp_.forward(col).col(0);
    }

    EpisodeLog run_episode(int episode, double noise_std, bool learn) {
        pending_.clear();
        const int T = cfg_.horizon;
        const int sdim = env_->state_dim();
        const Vec low = env_->action_low(), high = env_->action_high();
        const bool filtered = mode_ != Mode::baseline;

        EpisodeLog log;
        log.states.reserve(size_t(T) + 1);
        Vec s = env_->sample_init(rng_init_);
        log.states.push_back(s);

        for (int t = 0; t < T; ++t) {
            Vec u_rl = agent_.act(s, noise_std, rng_noise_);
            Vec ubar = u_bar(s);
            Vec ucbf = Vec::Zero(env_->action_dim());
            double eps = 0.0;
            Vec mu = Vec::Zero(sdim), sig = Vec::Zero(sdim);
            if (filtered) {
                if (!cfg_.oracle_dynamics) {
                    double sig_latent;
                    gp_.predict(env_->gp_features(s), mu, sig_latent);
                    sig = Vec::Constant(sdim, gp_.predictive_sigma(sig_latent));
                }
                try {
                    FilterResult fr = safe_filter(s, u_rl + ubar, barriers_, nominal_, mu, sig,
                                                  cfg_.k_delta, low, high, cfg_.qp_slack_weight);
                    ucbf = fr.u_cbf;
                    eps = fr.eps;
                } catch (const SolverError& e) {
                    throw SolverError("episode " + std::to_string(episode) + " step " +
                                      std::to_string(t) + ": episode aborted, filter QP failed: " +
                                      e.what());
                }
            }
            Vec u_tot = u_rl + ubar + ucbf;
            Vec s2 = env_->true_step(s, u_tot, t * env_->dt(), rng_env_);
            double r = env_->step_reward(s, u_tot, s2);

            if (learn) {
                replay_.push({s, u_tot, r, s2, false});
                if (filtered && !cfg_.oracle_dynamics) {
                    Vec d = s2 - nominal_.f(s) - nominal_.g(s) * u_tot;
                    for (int i = 0; i < sdim; ++i) {
                        ++band_total_;
                        if (std::abs(d[i] - mu[i]) <= cfg_.k_delta * sig[i]) ++band_hits_;
                    }
                    pending_.push_back({env_->gp_features(s), d});
                }
                if (mode_ == Mode::guide) comp_data_.emplace_back(s, ubar + ucbf);
            }

            log.u_rl.push_back(std::move(u_rl));
            log.u_bar.push_back(std::move(ubar));
            log.u_cbf.push_back(ucbf);
            log.eps.push_back(eps);
            log.rewards.push_back(r);
            log.ret += r;
            log.max_eps = std::max(log.max_eps, eps);
            log.mean_ucbf += ucbf.norm() / T;
            log.states.push_back(s2);
            s = std::move(s2);
        }

        const bool high_bad = env_->metric_worse_is_high();
        log.worst_metric = high_bad ? -std::numeric_limits<double>::infinity()
                                    : std::numeric_limits<double>::infinity();
        for (const auto& st : log.states) {
            double m = env_->safety_metric(st);
            log.worst_metric = high_bad ? std::max(log.worst_metric, m)
                                        : std::min(log.worst_metric, m);
            Vec hv(Eigen::Index(barriers_.size()));
            for (size_t i = 0; i < barriers_.size(); ++i)
                hv[Eigen::Index(i)] = barrier_value(barriers_[i], st);
            log.min_h = std::min(log.min_h, hv.minCoeff());
            log.h.push_back(std::move(hv));
        }
        log.unsafe = env_->is_unsafe(log.worst_metric);
        return log;
    }

    // Between episodes: absorb the episode's residuals into the model, refit
    // the compensator on everything collected so far, then run one horizon's
    // worth of replay updates.
    void post_episode(const EpisodeLog&) {
        if (!pending_.empty()) {
            for (const auto& r : pending_) gp_.add(r);
            pending_.clear();
            gp_.refit();
        }
        if (mode_ == Mode::guide && cfg_.comp_updates > 0)
            compensator_fit(comp_, comp_opt_, comp_data_, cfg_.comp_updates, cfg_.comp_batch,
                            rng_compfit_);
        if (replay_.size() >= size_t(cfg_.agent.batch)) {
            std::function<Vec(const Vec&)> fn = [this](const Vec& s) { return u_bar(s); };
            const auto* fp = mode_ == Mode::guide ? &fn : nullptr;
            for (int k = 0; k < cfg_.horizon; ++k)
                agent_.update(replay_.sample(cfg_.agent.batch, rng_replay_), fp);
        }
    }

    TrainResult train(const std::string& out_dir = "") {
        namespace fs = std::filesystem;
        TrainResult res;
        std::ofstream ep_out, st_out;
        if (!out_dir.empty()) {
            fs::create_directories(out_dir);
            // the orchestrator may have written it already (and other seeds race here)
            if (!fs::exists(fs::path(out_dir) / "config.resolved"))
                std::ofstream(fs::path(out_dir) / "config.resolved") << serialize_config(cfg_);
            ep_out.open(fs::path(out_dir) / ("seed" + std::to_string(seed_) + "_episodes.csv"));
            ep_out << episode_csv_header() << "\n";
            if (cfg_.verbose) {
                st_out.open(fs::path(out_dir) / ("seed" + std::to_string(seed_) + "_steps.csv"));
                st_out << step_csv_header(env_->state_dim(), env_->action_dim()) << "\n";
            }
        }

        const double half_width = (env_->action_high() - env_->action_low()).maxCoeff() / 2.0;
        for (int ep = 0; ep < cfg_.episodes; ++ep) {
            const double noise = noise_std_fraction(cfg_.agent, ep, cfg_.episodes) * half_width;
            EpisodeLog log = run_episode(ep, noise, true);
            post_episode(log);

            EpisodeRow row;
            row.episode = ep;
            row.ret = log.ret;
            row.safety = log.worst_metric;
            row.max_eps = log.max_eps;
            row.mean_ucbf = log.mean_ucbf;
            row.unsafe = log.unsafe ? 1 : 0;
            res.episodes.push_back(row);
            if (ep_out.is_open()) ep_out << format_episode_row(row) << "\n";
            if (st_out.is_open())
                for (int t = 0; t < cfg_.horizon; ++t)
                    st_out << format_step_row(ep, t, log.states[size_t(t)], log.u_rl[size_t(t)],
                                              log.u_bar[size_t(t)], log.u_cbf[size_t(t)],
                                              log.eps[size_t(t)], log.rewards[size_t(t)],
                                              log.states[size_t(t) + 1])
                           << "\n";
        }
        res.band_hits = band_hits_;
        res.band_total = band_total_;
        if (!out_dir.empty()) {
            const std::string stem =
                (fs::path(out_dir) / ("seed" + std::to_string(seed_) + "_")).string();
            agent_.actor().save(stem + "actor.bin");
            agent_.critic().save(stem + "critic.bin");
            if (mode_ == Mode::guide) comp_.save(stem + "compensator.bin");
        }
        return res;
    }

    // Score the proposed controller u - u_cbf against the deployed one. Greedy
    // rollouts (no exploration noise, nothing learned or stored).
    PolicyEvalReport proposed_policy_eval(int n_episodes) {
        PolicyEvalReport rep;
        for (int k = 0; k < n_episodes; ++k) {
            EpisodeLog log = run_episode(k, 0.0, false);
            double prop = 0.0;
            for (int t = 0; t < cfg_.horizon; ++t)
                prop += env_->step_reward(log.states[size_t(t)],
                                          log.u_rl[size_t(t)] + log.u_bar[size_t(t)],
                                          log.states[size_t(t) + 1]);
            rep.deployed_return += log.ret / n_episodes;
            rep.proposed_return += prop / n_episodes;
            rep.mean_ucbf += log.mean_ucbf / n_episodes;
        }
        return rep;
    }

  private:
    static ExperimentConfig validated(ExperimentConfig cfg) {
        auto errs = validate_config(cfg);
        if (!errs.empty()) {
            std::string joined = "config:";
            for (const auto& e : errs) joined += "\n  " + e;
            throw ConfigError(joined);
        }
        return cfg;
    }

    ExperimentConfig cfg_;
    uint64_t seed_;
    Mode mode_;
    std::unique_ptr<Env> env_;
    NominalModel nominal_;
    std::vector<AffineBarrier> barriers_;
    GpModel gp_;
    std::mt19937_64 rng_agent_, rng_comp_, rng_env_, rng_noise_, rng_init_, rng_replay_,
        rng_compfit_;
    DdpgAgent agent_;
    ReplayBuffer replay_;
    Mlp comp_;
    AdamState comp_opt_;
    std::vector<std::pair<Vec, Vec>> comp_data_;  // (state, u_bar + u_cbf) seen so far
    std::vector<Residual> pending_;               // residuals awaiting the next refit
    uint64_t band_hits_ = 0, band_total_ = 0;
};

}  // namespace rlcbf
