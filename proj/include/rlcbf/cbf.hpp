#pragma once

// Discrete-time affine control barrier constraints and the minimal-intervention
// safety filter. A barrier h(s) = p.s + q must satisfy
//
//   h(s_{t+1}) >= (1 - eta) h(s_t)
//
// one step ahead under the nominal model plus a GP band on the residual.
// Worst-casing the residual over mu +- k_delta sigma turns each barrier into
// one linear row c.a + eps >= b of a slack QP over the correction a.

#include <rlcbf/model.hpp>
#include <rlcbf/qp.hpp>

#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace rlcbf {

struct AffineBarrier {
    Vec p;
    double q;
    double eta;

    AffineBarrier(Vec p_, double q_, double eta_) : p(std::move(p_)), q(q_), eta(eta_) {
        if (p.size() == 0 || p.isZero(0.0)) throw ConfigError("barrier: p must be nonzero");
        if (!(eta >= 0.0 && eta <= 1.0))
            throw ConfigError("barrier: eta must lie in [0,1], got " + std::to_string(eta));
        if (!p.allFinite() || !std::isfinite(q)) throw ConfigError("barrier: non-finite field");
    }

    friend bool operator==(const AffineBarrier& a, const AffineBarrier& b) {
        return a.p.size() == b.p.size() && (a.p.array() == b.p.array()).all() && a.q == b.q &&
               a.eta == b.eta;
    }
};

inline double barrier_value(const AffineBarrier& bar, const Vec& s) { return bar.p.dot(s) + bar.q; }

// One QP row: c.a + eps >= b, where a is the correction on top of u_base and
// the residual is worst-cased over the band mu_d +- k_delta * sigma_d.
inline std::pair<Vec, double> cbf_row(const AffineBarrier& bar, const Vec& s,
                                      const NominalModel& nom, const Vec& mu_d,
                                      const Vec& sigma_d, double k_delta, const Vec& u_base) {
    const double h = barrier_value(bar, s);
    Vec c = nom.g(s).transpose() * bar.p;
    double b = (1.0 - bar.eta) * h - bar.p.dot(nom.f(s)) - c.dot(u_base) - bar.p.dot(mu_d) +
               k_delta * bar.p.cwiseAbs().dot(sigma_d) - bar.q;
    return {std::move(c), b};
}

struct FilterResult {
    Vec u_cbf;     // minimal correction, to be added to the proposed action
    double eps;    // slack shared across rows (0 when all barriers satisfiable)
    Vec margins;   // per barrier: worst-case h(s_next); >= (1-eta)h(s) - eps
    KktReport kkt;
    int iterations = 0;
};

inline FilterResult safe_filter(const Vec& s, const Vec& u_proposed,
                                const std::vector<AffineBarrier>& barriers,
                                const NominalModel& nom, const Vec& mu_d, const Vec& sigma_d,
                                double k_delta, const Vec& box_low, const Vec& box_high,
                                double slack_weight = 1e12) {
    QpSpec spec;
    spec.box_low = box_low - u_proposed;
    spec.box_high = box_high - u_proposed;
    spec.slack_weight = slack_weight;
    spec.rows.reserve(barriers.size());
    for (const auto& bar : barriers)
        spec.rows.push_back(cbf_row(bar, s, nom, mu_d, sigma_d, k_delta, u_proposed));

    QpSolution sol;
    try {
        sol = solve_qp(spec);
    } catch (const SolverError& err) {
        std::string ctx = "safe_filter: ";
        ctx += err.what();
        ctx += " at state [";
        for (int i = 0; i < s.size(); ++i) ctx += (i ? "," : "") + std::to_string(s[i]);
        ctx += "]";
        throw SolverError(ctx);
    }

    FilterResult res;
    res.u_cbf = sol.a;
    res.eps = sol.eps;
    res.kkt = sol.kkt;
    res.iterations = sol.iterations;
    res.margins.resize(Eigen::Index(barriers.size()));
    for (size_t i = 0; i < barriers.size(); ++i) {
        const auto& [c, b] = spec.rows[i];
        res.margins[Eigen::Index(i)] =
            (1.0 - barriers[i].eta) * barrier_value(barriers[i], s) + c.dot(sol.a) - b;
    }
    return res;
}

struct AuditReport {
    int steps = 0;
    int violations = 0;  // steps failing h(s') >= (1-eta)h(s) - eps - tol for some barrier
    std::vector<int> violating_steps;
    int steps_outside_C = 0;  // states (incl. the initial one) with min_i h_i < 0
    double min_h = std::numeric_limits<double>::infinity();
    double max_excursion = 0.0;  // max(0, -min_h)
    double eps_max = 0.0;
    double degradation_bound = 0.0;  // eps_max / min_i eta_i, the C_eps depth bound
};

// Replays a logged trajectory against the barrier set: flags every step where
// the logged slack fails to explain the barrier decline, and reports how deep
// the state ever left C versus the eps/eta degradation bound.
inline AuditReport invariance_audit(const std::vector<Vec>& states,
                                    const std::vector<double>& eps,
                                    const std::vector<AffineBarrier>& barriers,
                                    double tol = 1e-9) {
    if (states.size() != eps.size() + 1)
        throw ConfigError("invariance_audit: need one more state than logged slacks (got " +
                          std::to_string(states.size()) + " states, " +
                          std::to_string(eps.size()) + " slacks)");
    if (barriers.empty()) throw ConfigError("invariance_audit: no barriers");

    AuditReport rep;
    rep.steps = int(eps.size());
    double eta_min = 1.0;
    for (const auto& bar : barriers) eta_min = std::min(eta_min, bar.eta);

    for (size_t t = 0; t < states.size(); ++t) {
        double hmin = std::numeric_limits<double>::infinity();
        for (const auto& bar : barriers) hmin = std::min(hmin, barrier_value(bar, states[t]));
        rep.min_h = std::min(rep.min_h, hmin);
        if (hmin < -tol) ++rep.steps_outside_C;
    }
    rep.max_excursion = std::max(0.0, -rep.min_h);

    for (size_t t = 0; t + 1 < states.size(); ++t) {
        rep.eps_max = std::max(rep.eps_max, eps[t]);
        bool bad = false;
        for (const auto& bar : barriers) {
            double h0 = barrier_value(bar, states[t]);
            double h1 = barrier_value(bar, states[t + 1]);
            if (h1 < (1.0 - bar.eta) * h0 - eps[t] - tol) bad = true;
        }
        if (bad) {
            ++rep.violations;
            rep.violating_steps.push_back(int(t));
        }
    }
    rep.degradation_bound = eta_min > 0.0 ? rep.eps_max / eta_min : 0.0;
    return rep;
}

}  // namespace rlcbf
