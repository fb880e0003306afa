#pragma once

// Multi-output Gaussian-process regression of one-step dynamics residuals
// with a shared squared-exponential kernel:
//
//   mu(x*)   = k*^T (K + sn2 I)^-1 Y
//   var(x*)  = k(x*,x*) - k*^T (K + sn2 I)^-1 k*
//
// One Cholesky factor serves every output dimension, so the posterior
// standard deviation is common to all of them. Training data live in a
// sliding window capped at `cap` points (most recent kept).

#include <rlcbf/common.hpp>
#include <rlcbf/model.hpp>

#include <cmath>
#include <deque>

namespace rlcbf {

struct KernelHyper {
    double lengthscale = 1.0;
    double signal_var = 1.0;
    double noise_var = 1e-2;
};

struct Residual {
    Vec s;  // regression input (state or state features)
    Vec d;  // observed one-step residual, one entry per state dimension
};

inline Residual extract_residual(const Vec& s, const Vec& a, const Vec& s_next,
                                 const NominalModel& nominal) {
    Residual r;
    r.s = s;
    r.d = s_next - nominal.f(s) - nominal.g(s) * a;
    return r;
}

class GpModel {
  public:
    GpModel(int in_dim, int out_dim, KernelHyper hyper = {}, int cap = 1000)
        : in_dim_(in_dim), out_dim_(out_dim), hyper_(hyper), cap_(cap) {
        if (in_dim <= 0 || out_dim <= 0) throw ConfigError("gp: dimensions must be positive");
        if (cap <= 0) throw ConfigError("gp: window cap must be positive");
        if (hyper.lengthscale <= 0 || hyper.signal_var <= 0 || hyper.noise_var < 0)
            throw ConfigError("gp: lengthscale and signal variance must be positive, "
                              "noise variance nonnegative");
    }

    const KernelHyper& hyper() const { return hyper_; }
    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }
    size_t size() const { return window_.size(); }
    const Vec& input(size_t i) const { return window_[i].s; }
    const Vec& target(size_t i) const { return window_[i].d; }
    const Mat& chol() const { return L_; }
    double jitter_used() const { return jitter_; }

    // Slide the window: append one residual, evicting the oldest beyond cap.
    // The posterior is unchanged until the next refit().
    void add(const Residual& r) {
        if (r.s.size() != in_dim_ || r.d.size() != out_dim_)
            throw ConfigError("gp: residual dimensions (" + std::to_string(r.s.size()) + "," +
                              std::to_string(r.d.size()) + ") do not match model (" +
                              std::to_string(in_dim_) + "," + std::to_string(out_dim_) + ")");
        window_.push_back(r);
        while (int(window_.size()) > cap_) window_.pop_front();
    }

    void refit() {
        const int n = int(window_.size());
        fitted_n_ = n;
        if (n == 0) return;
        Mat K(n, n);
        for (int i = 0; i < n; ++i) {
            K(i, i) = hyper_.signal_var;
            for (int j = 0; j < i; ++j) K(i, j) = K(j, i) = kernel(window_[i].s, window_[j].s);
        }
        Mat Y(n, out_dim_);
        for (int i = 0; i < n; ++i) Y.row(i) = window_[i].d.transpose();

        jitter_ = 0.0;
        double jitter = 1e-10;
        for (;;) {
            Mat A = K;
            A.diagonal().array() += hyper_.noise_var + jitter_;
            Eigen::LLT<Mat> llt(A);
            if (llt.info() == Eigen::Success) {
                L_ = llt.matrixL();
                alpha_ = llt.solve(Y);
                return;
            }
            if (jitter > 1e-6)
                throw SolverError("gp: kernel matrix not positive definite after jitter "
                                  "escalation to 1e-6 (n=" + std::to_string(n) + ")");
            jitter_ = jitter;
            jitter *= 10.0;
        }
    }

    // Posterior mean (all output dims) and the shared posterior standard
    // deviation of the latent residual function.
    void predict(const Vec& x, Vec& mu, double& sigma) const {
        if (x.size() != in_dim_) throw ConfigError("gp: query dimension mismatch");
        if (fitted_n_ == 0) {
            mu = Vec::Zero(out_dim_);
            sigma = std::sqrt(hyper_.signal_var);
            return;
        }
        Vec ks(fitted_n_);
        for (int i = 0; i < fitted_n_; ++i) ks[i] = kernel(window_[i].s, x);
        mu = (ks.transpose() * alpha_).transpose();
        Vec v = L_.triangularView<Eigen::Lower>().solve(ks);
        double var = hyper_.signal_var - v.squaredNorm();
        sigma = std::sqrt(std::clamp(var, 0.0, hyper_.signal_var));
    }

    // Standard deviation of the next realized residual measurement: latent
    // posterior plus observation noise. This is the band the safety filter
    // and coverage audits care about, since realized residuals include the
    // noise the latent posterior excludes.
    double predictive_sigma(double sigma_latent) const {
        return std::sqrt(sigma_latent * sigma_latent + hyper_.noise_var);
    }

    // Elementwise band mu +- k_delta * sigma; predictive widens the band by
    // the observation noise.
    std::pair<Vec, Vec> confidence(const Vec& x, double k_delta, bool predictive = true) const {
        Vec mu;
        double sigma;
        predict(x, mu, sigma);
        if (predictive) sigma = predictive_sigma(sigma);
        Vec half = Vec::Constant(out_dim_, k_delta * sigma);
        return {mu - half, mu + half};
    }

  private:
    double kernel(const Vec& a, const Vec& b) const {
        double r2 = (a - b).squaredNorm();
        return hyper_.signal_var * std::exp(-r2 / (2.0 * hyper_.lengthscale * hyper_.lengthscale));
    }

    int in_dim_, out_dim_;
    KernelHyper hyper_;
    int cap_;
    std::deque<Residual> window_;
    int fitted_n_ = 0;
    Mat L_, alpha_;
    double jitter_ = 0.0;
};

}  // namespace rlcbf
