#pragma once

// Slack quadratic program used by the safety filter:
//
//   minimize    0.5 |a|^2 + keps * eps
//   subject to  c_i^T a + eps >= b_i     (barrier rows)
//               low <= a <= high         (actuator box)
//               eps >= 0
//
// Solved by a primal active-set method over the stacked variable x = (a, eps).
// The objective is linear in eps, so the Hessian is only positive
// semidefinite; the working set therefore always keeps at least one
// eps-involving constraint (a barrier row or the eps bound), which makes the
// reduced Hessian positive definite. Steps are computed with a null-space
// basis from a QR factorization so they stay on the active face exactly, and
// internals run in long double because keps spans many decades (1e12 by
// default) while action-space quantities are O(1).

#include <rlcbf/common.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace rlcbf {

struct QpSpec {
    std::vector<std::pair<Vec, double>> rows;  // (c, b): c^T a + eps >= b
    Vec box_low, box_high;
    double slack_weight = 1e12;
};

struct KktReport {
    double stationarity = 0;     // |grad f - A^T lambda|_inf / max(1, |grad f|_inf)
    double primal_inf = 0;       // worst constraint violation (absolute)
    double dual_inf = 0;         // worst negative multiplier, scaled like stationarity
    double complementarity = 0;  // worst |lambda_i * g_i|, scaled
    double max_residual = 0;
};

struct QpSolution {
    Vec a;
    double eps = 0;
    double objective = 0;
    std::vector<int> active;  // constraint ids: rows, then low, high, then eps bound
    Vec multipliers;          // one entry per constraint, zero when inactive
    KktReport kkt;
    int iterations = 0;
};

namespace detail {

using LD = long double;
using VecL = Eigen::Matrix<LD, Eigen::Dynamic, 1>;
using MatL = Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic>;

struct QpWork {
    int m = 0, nrows = 0, ncon = 0;
    std::vector<VecL> grad;  // constraint gradients in (a, eps)
    std::vector<LD> rhs;     // constraint value g_i(x) = grad_i . x - rhs_i >= 0
    LD keps = 0;

    explicit QpWork(const QpSpec& s) {
        m = int(s.box_low.size());
        nrows = int(s.rows.size());
        ncon = nrows + 2 * m + 1;
        keps = LD(s.slack_weight);
        const int n = m + 1;
        for (int i = 0; i < nrows; ++i) {
            VecL g = VecL::Zero(n);
            for (int j = 0; j < m; ++j) g[j] = LD(s.rows[i].first[j]);
            g[m] = 1;
            grad.push_back(g);
            rhs.push_back(LD(s.rows[i].second));
        }
        for (int j = 0; j < m; ++j) {  // a_j >= low_j
            VecL g = VecL::Zero(n);
            g[j] = 1;
            grad.push_back(g);
            rhs.push_back(LD(s.box_low[j]));
        }
        for (int j = 0; j < m; ++j) {  // -a_j >= -high_j
            VecL g = VecL::Zero(n);
            g[j] = -1;
            grad.push_back(g);
            rhs.push_back(LD(-s.box_high[j]));
        }
        VecL g = VecL::Zero(n);  // eps >= 0
        g[m] = 1;
        grad.push_back(g);
        rhs.push_back(0);
    }

    LD value(int i, const VecL& x) const { return grad[i].dot(x) - rhs[i]; }
    bool eps_involving(int i) const { return i < nrows || i == ncon - 1; }
};

}  // namespace detail

inline KktReport kkt_check(const QpSpec& spec, const Vec& a, double eps,
                           const Vec* multipliers = nullptr) {
    const int m = int(a.size());
    const int nrows = int(spec.rows.size());
    const int ncon = nrows + 2 * m + 1;
    const double keps = spec.slack_weight;
    const int n = m + 1;

    auto grad_of = [&](int i) {
        Vec g = Vec::Zero(n);
        if (i < nrows) {
            g.head(m) = spec.rows[i].first;
            g[m] = 1;
        } else if (i < nrows + m) {
            g[i - nrows] = 1;
        } else if (i < nrows + 2 * m) {
            g[i - nrows - m] = -1;
        } else {
            g[m] = 1;
        }
        return g;
    };
    auto value_of = [&](int i) {
        if (i < nrows) return spec.rows[i].first.dot(a) + eps - spec.rows[i].second;
        if (i < nrows + m) return a[i - nrows] - spec.box_low[i - nrows];
        if (i < nrows + 2 * m) return spec.box_high[i - nrows - m] - a[i - nrows - m];
        return eps;
    };

    KktReport rep;
    for (int i = 0; i < ncon; ++i) rep.primal_inf = std::max(rep.primal_inf, -value_of(i));
    rep.primal_inf = std::max(rep.primal_inf, 0.0);

    Vec gradf(n);
    gradf.head(m) = a;
    gradf[m] = keps;
    const double scale = std::max(1.0, gradf.lpNorm<Eigen::Infinity>());

    Vec lam;
    if (multipliers) {
        lam = *multipliers;
    } else {
        // Least-squares multipliers over the numerically active set.
        std::vector<int> act;
        for (int i = 0; i < ncon; ++i)
            if (std::abs(value_of(i)) <= 1e-6) act.push_back(i);
        lam = Vec::Zero(ncon);
        if (!act.empty()) {
            Mat A(n, act.size());
            for (size_t k = 0; k < act.size(); ++k) A.col(k) = grad_of(act[k]);
            Vec sol = A.colPivHouseholderQr().solve(gradf);
            for (size_t k = 0; k < act.size(); ++k) lam[act[k]] = std::max(0.0, sol[k]);
        }
    }

    Vec resid = gradf;
    for (int i = 0; i < ncon; ++i)
        if (lam[i] != 0.0) resid -= lam[i] * grad_of(i);
    rep.stationarity = resid.lpNorm<Eigen::Infinity>() / scale;
    for (int i = 0; i < ncon; ++i) {
        rep.dual_inf = std::max(rep.dual_inf, -lam[i] / scale);
        rep.complementarity = std::max(rep.complementarity, std::abs(lam[i] * value_of(i)) / scale);
    }
    rep.dual_inf = std::max(rep.dual_inf, 0.0);
    rep.max_residual =
        std::max({rep.stationarity, rep.primal_inf, rep.dual_inf, rep.complementarity});
    return rep;
}

inline QpSolution solve_qp(const QpSpec& spec) {
    using namespace detail;
    const int m = int(spec.box_low.size());
    if (spec.box_high.size() != m) throw ConfigError("qp: box bound sizes differ");
    if (m <= 0) throw ConfigError("qp: empty action box");
    if (!(spec.slack_weight > 0) || !std::isfinite(spec.slack_weight))
        throw ConfigError("qp: slack weight must be positive and finite");
    for (int j = 0; j < m; ++j) {
        if (!std::isfinite(spec.box_low[j]) || !std::isfinite(spec.box_high[j]))
            throw ConfigError("qp: non-finite box bound at coordinate " + std::to_string(j));
        if (spec.box_low[j] > spec.box_high[j])
            throw ConfigError("qp: box_low > box_high at coordinate " + std::to_string(j));
    }
    for (size_t i = 0; i < spec.rows.size(); ++i) {
        if (spec.rows[i].first.size() != m)
            throw ConfigError("qp: row " + std::to_string(i) + " has dimension " +
                              std::to_string(spec.rows[i].first.size()) + ", expected " +
                              std::to_string(m));
        if (!spec.rows[i].first.allFinite() || !std::isfinite(spec.rows[i].second))
            throw ConfigError("qp: non-finite entries in row " + std::to_string(i));
    }

    QpWork w(spec);
    const int n = m + 1;
    const int nrows = w.nrows;
    const LD K = w.keps;

    // Feasible start: clamp zero into the box and lift eps to cover the rows.
    VecL x = VecL::Zero(n);
    for (int j = 0; j < m; ++j)
        x[j] = std::clamp<LD>(0, LD(spec.box_low[j]), LD(spec.box_high[j]));
    int worst_row = -1;
    LD worst = 0;
    for (int i = 0; i < nrows; ++i) {
        LD viol = w.rhs[i] - w.grad[i].head(m).dot(x.head(m));
        if (viol > worst) {
            worst = viol;
            worst_row = i;
        }
    }
    x[m] = std::max<LD>(0, worst);

    std::vector<int> W;
    if (worst_row >= 0 && x[m] > 0)
        W.push_back(worst_row);
    else
        W.push_back(w.ncon - 1);  // eps bound
    for (int j = 0; j < m; ++j) {  // degenerate box coordinates are pinned from the start
        if (spec.box_low[j] == spec.box_high[j]) W.push_back(nrows + j);
    }

    auto in_W = [&](int i) { return std::find(W.begin(), W.end(), i) != W.end(); };
    auto has_eps_involving = [&]() {
        for (int i : W)
            if (w.eps_involving(i)) return true;
        return false;
    };

    const int cap = 100 * (w.ncon + 1) + 50;
    const LD tol_drop = LD(1e-9) + LD(2e-16) * K;
    int iter = 0;
    VecL lambda_W;

    for (;; ++iter) {
        if (iter >= cap)
            throw SolverError("qp: iteration cap " + std::to_string(cap) + " exceeded (m=" +
                              std::to_string(m) + ", rows=" + std::to_string(nrows) +
                              ", keps=" + std::to_string(double(K)) + ")");

        if (!has_eps_involving()) {
            // The objective is linear and decreasing along -eps; ride it to
            // the nearest eps-involving constraint (one always exists).
            LD alpha = x[m];  // eps >= 0 blocks at this step
            int blocker = w.ncon - 1;
            for (int i = 0; i < nrows; ++i) {
                if (in_W(i)) continue;
                LD gv = w.value(i, x);
                if (gv < alpha) {
                    alpha = std::max<LD>(0, gv);
                    blocker = i;
                }
            }
            x[m] -= alpha;
            W.push_back(blocker);
            continue;
        }

        // Null-space basis of the working-set gradients.
        MatL AWt(n, W.size());
        for (size_t k = 0; k < W.size(); ++k) AWt.col(k) = w.grad[W[k]];
        Eigen::ColPivHouseholderQR<MatL> qr(AWt);
        qr.setThreshold(LD(1e-12));
        const int rank = int(qr.rank());
        if (rank < int(W.size())) {
            W.pop_back();  // dependent constraint slipped in; discard the newest
            continue;
        }
        MatL Q = qr.householderQ();
        MatL Z = Q.rightCols(n - rank);

        VecL gradf(n);
        gradf.head(m) = x.head(m);
        gradf[m] = K;

        VecL p = VecL::Zero(n);
        LD decrease = 0;
        if (Z.cols() > 0) {
            MatL Za = Z.topRows(m);
            MatL Hr = Za.transpose() * Za;  // reduced Hessian, PD under the eps invariant
            VecL rhs = -Z.transpose() * gradf;
            Eigen::LLT<MatL> llt(Hr);
            VecL y;
            if (llt.info() == Eigen::Success)
                y = llt.solve(rhs);
            else
                y = Hr.fullPivLu().solve(rhs);
            p = Z * y;
            decrease = -(gradf.dot(p)) - LD(0.5) * p.head(m).squaredNorm();
        }

        const LD xs = std::max<LD>(1, x.cwiseAbs().maxCoeff());
        const LD obj_now = LD(0.5) * x.head(m).squaredNorm() + K * x[m];
        bool real_step =
            p.cwiseAbs().maxCoeff() > LD(1e-12) * xs && decrease > LD(1e-10) * std::max<LD>(1, obj_now);

        if (real_step) {
            LD alpha = 1;
            int blocker = -1;
            for (int i = 0; i < w.ncon; ++i) {
                if (in_W(i)) continue;
                LD d = w.grad[i].dot(p);
                if (d >= -LD(1e-16) * (1 + p.cwiseAbs().maxCoeff())) continue;
                LD ai = std::max<LD>(0, w.value(i, x)) / (-d);
                if (ai < alpha) {
                    alpha = ai;
                    blocker = i;
                }
            }
            x += alpha * p;
            if (blocker >= 0) W.push_back(blocker);
            continue;
        }

        // Stationary on this working set; inspect multipliers.
        lambda_W = qr.solve(gradf);
        int drop = -1;
        LD most_neg = -tol_drop;
        for (size_t k = 0; k < W.size(); ++k) {
            if (lambda_W[k] < most_neg) {
                most_neg = lambda_W[k];
                drop = int(k);
            }
        }
        if (drop < 0) break;  // all multipliers acceptably nonnegative: optimal
        W.erase(W.begin() + drop);
    }

    QpSolution sol;
    sol.a = Vec(m);
    for (int j = 0; j < m; ++j)
        sol.a[j] = std::clamp(double(x[j]), spec.box_low[j], spec.box_high[j]);
    double eps = std::max(0.0, double(x[m]));
    for (auto& [c, b] : spec.rows) eps = std::max(eps, b - c.dot(sol.a));
    sol.eps = eps;
    sol.objective = 0.5 * sol.a.squaredNorm() + spec.slack_weight * sol.eps;
    sol.active = W;
    std::sort(sol.active.begin(), sol.active.end());
    sol.multipliers = Vec::Zero(w.ncon);
    for (size_t k = 0; k < W.size(); ++k)
        sol.multipliers[W[k]] = std::max(0.0, double(lambda_W[k]));
    sol.iterations = iter;
    sol.kkt = kkt_check(spec, sol.a, sol.eps, &sol.multipliers);
    return sol;
}

}  // namespace rlcbf
