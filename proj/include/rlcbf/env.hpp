#pragma once

// Benchmark environments as discrete-time control-affine systems
// s' = f(s) + g(s) u + d(s): an inverted pendulum whose nominal model carries
// 40% parameter error, and a five-car chain where car 4 is learned and the
// other drivers follow scripted laws with process noise. Each environment
// exposes the true step, the (wrong) nominal model, the reward, the initial
// distribution, actuator box, safety barriers and the GP feature map.

#include <rlcbf/cbf.hpp>
#include <rlcbf/common.hpp>
#include <rlcbf/model.hpp>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace rlcbf {

inline double wrap_angle(double th) {
    th = std::fmod(th + M_PI, 2.0 * M_PI);
    if (th <= 0.0) th += 2.0 * M_PI;
    return th - M_PI;
}

class Env {
  public:
    virtual ~Env() = default;
    virtual std::string name() const = 0;
    virtual int state_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual Vec action_low() const = 0;
    virtual Vec action_high() const = 0;
    virtual double dt() const = 0;
    virtual int horizon() const = 0;
    virtual Vec true_step(const Vec& s, const Vec& u, double t, std::mt19937_64& rng) const = 0;
    virtual NominalModel nominal() const = 0;
    virtual double step_reward(const Vec& s, const Vec& u, const Vec& s_next) const = 0;
    virtual Vec sample_init(std::mt19937_64& rng) const = 0;
    virtual int feature_dim() const = 0;
    virtual Vec gp_features(const Vec& s) const = 0;
    virtual std::vector<AffineBarrier> default_barriers() const = 0;
    virtual double safety_metric(const Vec& s) const = 0;
    virtual bool metric_worse_is_high() const = 0;  // pendulum: max|theta|; car: min headway
    virtual double unsafe_threshold() const = 0;
    virtual bool collided(const Vec& s) const { return false; }

    bool is_unsafe(double metric) const {
        return metric_worse_is_high() ? metric > unsafe_threshold() : metric < unsafe_threshold();
    }
};

struct PendulumParams {
    double m_true = 1.0, l_true = 1.0;
    double m_nom = 1.4, l_nom = 1.4;  // 40% parameter error
    double g = 10.0;
    double dt = 0.05;
    int horizon = 200;
    double torque_max = 15.0;
    double eta = 0.5;
    double gamma_v = 0.25;  // velocity lookahead in the augmented barriers
    double init_theta = 0.8, init_theta_dot = 1.0;
};

class PendulumEnv : public Env {
  public:
    explicit PendulumEnv(PendulumParams prm) : prm_(prm) {
        if (prm.dt <= 0 || prm.horizon < 1 || prm.torque_max <= 0 || prm.m_true <= 0 ||
            prm.l_true <= 0 || prm.m_nom <= 0 || prm.l_nom <= 0)
            throw ConfigError("pendulum: non-positive physical parameter");
    }

    std::string name() const override { return "pendulum"; }
    int state_dim() const override { return 2; }
    int action_dim() const override { return 1; }
    Vec action_low() const override { return Vec::Constant(1, -prm_.torque_max); }
    Vec action_high() const override { return Vec::Constant(1, prm_.torque_max); }
    double dt() const override { return prm_.dt; }
    int horizon() const override { return prm_.horizon; }
    const PendulumParams& params() const { return prm_; }

    Vec true_step(const Vec& s, const Vec& u, double, std::mt19937_64&) const override {
        const double cg = 3.0 * prm_.g / (2.0 * prm_.l_true);
        const double cu = 3.0 / (prm_.m_true * prm_.l_true * prm_.l_true);
        const double acc = cg * std::sin(s[0]) + cu * u[0];
        Vec out(2);
        out[0] = wrap_angle(s[0] + s[1] * prm_.dt + acc * prm_.dt * prm_.dt);
        out[1] = s[1] + acc * prm_.dt;
        return out;
    }

    NominalModel nominal() const override {
        const double cg = 3.0 * prm_.g / (2.0 * prm_.l_nom);
        const double cu = 3.0 / (prm_.m_nom * prm_.l_nom * prm_.l_nom);
        const double dt = prm_.dt;
        NominalModel nom;
        nom.f = [cg, dt](const Vec& s) {
            Vec out(2);
            const double grav = cg * std::sin(s[0]);
            out[0] = s[0] + s[1] * dt + grav * dt * dt;
            out[1] = s[1] + grav * dt;
            return out;
        };
        nom.g = [cu, dt](const Vec&) {
            Mat G(2, 1);
            G << cu * dt * dt, cu * dt;
            return G;
        };
        return nom;
    }

    double step_reward(const Vec& s, const Vec& u, const Vec&) const override {
        return -(s[0] * s[0] + 0.1 * s[1] * s[1] + 0.001 * u[0] * u[0]);
    }

    Vec sample_init(std::mt19937_64& rng) const override {
        auto bars = default_barriers();
        for (int attempt = 0; attempt < 1000; ++attempt) {
            Vec s(2);
            s[0] = uniform(rng, -prm_.init_theta, prm_.init_theta);
            s[1] = uniform(rng, -prm_.init_theta_dot, prm_.init_theta_dot);
            bool ok = true;
            for (const auto& bar : bars) ok = ok && barrier_value(bar, s) >= 0.0;
            if (ok) return s;
        }
        throw TrainingError("pendulum: init sampler failed to land inside the safe set");
    }

    int feature_dim() const override { return 2; }
    Vec gp_features(const Vec& s) const override { return s; }

    std::vector<AffineBarrier> default_barriers() const override {
        std::vector<AffineBarrier> bars;
        Vec p(2);
        p << -1.0, -prm_.gamma_v;
        bars.emplace_back(p, 1.0, prm_.eta);
        bars.emplace_back(-p, 1.0, prm_.eta);
        p << -1.0, 0.0;
        bars.emplace_back(p, 1.0, prm_.eta);
        bars.emplace_back(-p, 1.0, prm_.eta);
        return bars;
    }

    double safety_metric(const Vec& s) const override { return std::abs(s[0]); }
    bool metric_worse_is_high() const override { return true; }
    double unsafe_threshold() const override { return 1.0; }

  private:
    PendulumParams prm_;
};

struct CarParams {
    double kp = 4.0, kb = 20.0, kd = 0.1;          // true driver/drag parameters
    double kp_nom = 3.5, kb_nom = 18.0, kd_nom = 0.0;
    double v_des = 30.0;
    double lead_amp = 10.0, lead_freq = 0.2;       // lead-car forcing v_des - amp*sin(freq*t)
    double brake_gap = 6.0;                        // G1 threshold for cars 2,3
    double brake_range = 12.0;                     // G2 threshold on s3 - s5 for car 5
    double sigma_a = 0.5;                          // driver acceleration noise
    double a_max = 100.0;
    double dt = 0.1;
    int horizon = 300;
    double eta = 0.5;
    double tau = 0.5;                              // relative-velocity lookahead in barriers
    double init_gap_lo = 8.0, init_gap_hi = 12.0;
    double init_v_lo = 28.0, init_v_hi = 32.0;
};

// State layout: (s1, v1, s2, v2, s3, v3, s4, v4, s5, v5); car 4 is controlled.
class CarEnv : public Env {
  public:
    explicit CarEnv(CarParams prm) : prm_(prm) {
        if (prm.dt <= 0 || prm.horizon < 1 || prm.a_max <= 0 || prm.sigma_a < 0)
            throw ConfigError("car: bad dt/horizon/a_max/sigma_a");
        if (prm.init_gap_lo > prm.init_gap_hi || prm.init_v_lo > prm.init_v_hi)
            throw ConfigError("car: init ranges out of order");
    }

    std::string name() const override { return "car"; }
    int state_dim() const override { return 10; }
    int action_dim() const override { return 1; }
    Vec action_low() const override { return Vec::Constant(1, -prm_.a_max); }
    Vec action_high() const override { return Vec::Constant(1, prm_.a_max); }
    double dt() const override { return prm_.dt; }
    int horizon() const override { return prm_.horizon; }
    const CarParams& params() const { return prm_; }

    Vec true_step(const Vec& s, const Vec& u, double t, std::mt19937_64& rng) const override {
        Vec acc = driver_laws(prm_, s, t, prm_.kp, prm_.kb, true);
        if (prm_.sigma_a > 0.0)
            for (int i : {0, 1, 2, 4}) acc[i] += gaussian(rng, 0.0, prm_.sigma_a);
        acc[3] = u[0];
        Vec out(10);
        for (int i = 0; i < 5; ++i) {
            double a = std::clamp(acc[i], -prm_.a_max, prm_.a_max);
            double v = s[2 * i + 1] + (-prm_.kd * s[2 * i + 1] + a) * prm_.dt;
            out[2 * i + 1] = v;
            out[2 * i] = s[2 * i] + v * prm_.dt;
        }
        return out;
    }

    NominalModel nominal() const override {
        CarParams prm = prm_;
        NominalModel nom;
        nom.f = [prm](const Vec& s) {
            Vec acc = driver_laws(prm, s, 0.0, prm.kp_nom, prm.kb_nom, false);
            acc[3] = 0.0;
            Vec out(10);
            for (int i = 0; i < 5; ++i) {
                double a = std::clamp(acc[i], -prm.a_max, prm.a_max);
                double v = s[2 * i + 1] + (-prm.kd_nom * s[2 * i + 1] + a) * prm.dt;
                out[2 * i + 1] = v;
                out[2 * i] = s[2 * i] + v * prm.dt;
            }
            return out;
        };
        const double dt = prm_.dt;
        nom.g = [dt](const Vec&) {
            Mat G = Mat::Zero(10, 1);
            G(6, 0) = dt * dt;
            G(7, 0) = dt;
            return G;
        };
        return nom;
    }

    double step_reward(const Vec& s, const Vec& u, const Vec& s_next) const override {
        double a4 = std::clamp(u[0], -prm_.a_max, prm_.a_max);
        double r = -s[7] * std::max(a4, 0.0);
        for (int front : {4, 6}) {  // gaps 3-4 and 4-5 in the landed state
            double gap = s_next[front] - s_next[front + 2];
            if (gap <= 3.0) r -= 500.0 / std::max(gap, 0.01);
        }
        return r;
    }

    Vec sample_init(std::mt19937_64& rng) const override {
        auto bars = default_barriers();
        for (int attempt = 0; attempt < 1000; ++attempt) {
            Vec gaps(4), vels(5);
            for (int i = 0; i < 4; ++i) gaps[i] = uniform(rng, prm_.init_gap_lo, prm_.init_gap_hi);
            for (int i = 0; i < 5; ++i) vels[i] = uniform(rng, prm_.init_v_lo, prm_.init_v_hi);
            Vec s(10);
            double pos = 0.0;
            for (int i = 4; i >= 0; --i) {
                s[2 * i] = pos;
                s[2 * i + 1] = vels[i];
                if (i > 0) pos += gaps[i - 1];
            }
            bool ok = true;
            for (const auto& bar : bars) ok = ok && barrier_value(bar, s) >= 0.0;
            if (ok) return s;
        }
        throw TrainingError("car: init sampler failed to land inside the safe set");
    }

    int feature_dim() const override { return 9; }
    Vec gp_features(const Vec& s) const override {
        Vec f(9);
        for (int i = 0; i < 5; ++i) f[i] = s[2 * i + 1];
        for (int i = 0; i < 4; ++i) f[5 + i] = s[2 * i] - s[2 * i + 2];
        return f;
    }

    std::vector<AffineBarrier> default_barriers() const override {
        std::vector<AffineBarrier> bars;
        for (int front : {4, 6}) {
            Vec p = Vec::Zero(10);
            p[front] = 1.0;
            p[front + 1] = prm_.tau;
            p[front + 2] = -1.0;
            p[front + 3] = -prm_.tau;
            bars.emplace_back(p, -2.0, prm_.eta);
        }
        return bars;
    }

    double safety_metric(const Vec& s) const override {
        return std::min(s[4] - s[6], s[6] - s[8]);
    }
    bool metric_worse_is_high() const override { return false; }
    double unsafe_threshold() const override { return 2.0; }
    bool collided(const Vec& s) const override {
        return s[4] - s[6] <= 0.0 || s[6] - s[8] <= 0.0;
    }

  private:
    // Scripted longitudinal laws for cars 1,2,3,5 (car 4's slot is overwritten).
    // with_forcing selects the true time-varying lead-car term; the nominal
    // model has no clock, so the lead falls back to plain v_des.
    static Vec driver_laws(const CarParams& prm, const Vec& s, double t, double kp, double kb,
                           bool with_forcing) {
        Vec acc(5);
        acc[0] = prm.v_des - (with_forcing ? prm.lead_amp * std::sin(prm.lead_freq * t) : 0.0);
        for (int i : {1, 2}) {
            double gap = s[2 * (i - 1)] - s[2 * i];
            acc[i] = kp * (prm.v_des - s[2 * i + 1]) - kb * (gap <= prm.brake_gap ? gap : 0.0);
        }
        acc[3] = 0.0;
        double range = s[4] - s[8];
        acc[4] = kp * (prm.v_des - s[9]) -
                 0.5 * kb * (range <= prm.brake_range ? range : 0.0);
        return acc;
    }

    CarParams prm_;
};

}  // namespace rlcbf
