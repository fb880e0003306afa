#include <catch2/catch_amalgamated.hpp>

#include <rlcbf/gp.hpp>

#include "oracle_helpers.hpp"

using namespace rlcbf;

namespace {

Vec rvec(std::mt19937_64& rng, int n, double lo, double hi) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(rng, lo, hi);
    return v;
}

}  // namespace

TEST_CASE("single observation shrinks toward the data point") {
    // With K = sf2 = 1 and sn2 = 0.01: mu(x0) = y0 / 1.01 and
    // var(x0) = 1 - 1/1.01 = 0.0099009900990...
    GpModel gp(2, 1, KernelHyper{1.0, 1.0, 0.01});
    Vec x0(2);
    x0 << 0.3, -0.7;
    Vec y0(1);
    y0 << 2.0;
    gp.add({x0, y0});
    gp.refit();
    Vec mu;
    double sigma;
    gp.predict(x0, mu, sigma);
    REQUIRE(mu[0] == Catch::Approx(2.0 / 1.01).margin(1e-12));
    REQUIRE(sigma * sigma == Catch::Approx(1.0 - 1.0 / 1.01).margin(1e-12));
}

TEST_CASE("empty model returns the prior") {
    GpModel gp(3, 2, KernelHyper{1.0, 2.5, 0.01});
    Vec mu;
    double sigma;
    gp.predict(Vec::Zero(3), mu, sigma);
    REQUIRE(mu.size() == 2);
    REQUIRE(mu.norm() == 0.0);
    REQUIRE(sigma == Catch::Approx(std::sqrt(2.5)).margin(1e-12));
}

TEST_CASE("noise-free interpolation is exact at a training point") {
    GpModel gp(1, 1, KernelHyper{1.0, 1.0, 0.0});
    auto rng = make_stream(42, 0);
    for (int i = 0; i < 6; ++i) {
        Vec x(1), y(1);
        x << double(i);  // well separated points keep K comfortably regular
        y << uniform(rng, -2, 2);
        gp.add({x, y});
    }
    gp.refit();
    Vec q(1);
    q << 3.0;
    Vec mu;
    double sigma;
    gp.predict(q, mu, sigma);
    REQUIRE(mu[0] == Catch::Approx(gp.target(3)[0]).margin(1e-6));
    REQUIRE(sigma < 1e-4);
}

TEST_CASE("posterior matches the dense oracle") {
    auto rng = make_stream(77, 0);
    for (int trial = 0; trial < 25; ++trial) {
        int in_dim = 1 + trial % 4;
        int out_dim = 1 + trial % 3;
        int n = 1 + int(uniform(rng, 0, 20));
        if (n > 20) n = 20;
        double l = uniform(rng, 0.4, 2.5);
        double sf2 = uniform(rng, 0.3, 3.0);
        double sn2 = uniform(rng, 1e-3, 0.3);
        GpModel gp(in_dim, out_dim, KernelHyper{l, sf2, sn2});
        std::vector<Vec> X;
        Mat Y(n, out_dim);
        for (int i = 0; i < n; ++i) {
            Vec x = rvec(rng, in_dim, -2, 2);
            Vec y = rvec(rng, out_dim, -3, 3);
            X.push_back(x);
            Y.row(i) = y.transpose();
            gp.add({x, y});
        }
        gp.refit();
        for (int q = 0; q < 4; ++q) {
            Vec xq = rvec(rng, in_dim, -2.5, 2.5);
            Vec mu, mu_ref;
            double sigma, var_ref;
            gp.predict(xq, mu, sigma);
            oracle::dense_gp_predict(X, Y, xq, l, sf2, sn2, mu_ref, var_ref);
            INFO("trial " << trial << " query " << q << " n=" << n);
            REQUIRE((mu - mu_ref).lpNorm<Eigen::Infinity>() < 1e-8);
            REQUIRE(std::abs(sigma * sigma - std::max(0.0, var_ref)) < 1e-8);
        }
    }
}

TEST_CASE("adding an observation never increases posterior variance there") {
    auto rng = make_stream(78, 0);
    for (int trial = 0; trial < 20; ++trial) {
        double sn2 = (trial % 2 == 0) ? 0.0 : 0.05;
        GpModel gp(2, 1, KernelHyper{1.0, 1.0, sn2});
        int n = 2 + trial % 6;
        for (int i = 0; i < n; ++i) gp.add({rvec(rng, 2, -2, 2), rvec(rng, 1, -1, 1)});
        gp.refit();
        Vec xq = rvec(rng, 2, -2, 2);
        Vec mu;
        double before, after;
        gp.predict(xq, mu, before);
        gp.add({xq, rvec(rng, 1, -1, 1)});
        gp.refit();
        gp.predict(xq, mu, after);
        REQUIRE(after <= before + 1e-9);
    }
}

TEST_CASE("window drops the oldest residuals beyond the cap") {
    GpModel gp(1, 1, KernelHyper{1.0, 1.0, 0.01}, 5);
    for (int i = 0; i < 8; ++i) {
        Vec x(1), y(1);
        x << double(i);
        y << double(i);
        gp.add({x, y});
    }
    REQUIRE(gp.size() == 5);
    gp.refit();
    // Oldest surviving input is i=3.
    REQUIRE(gp.input(0)[0] == Catch::Approx(3.0));
    // A query at the evicted point i=0 is far from all stored data, so the
    // posterior reverts toward the prior there.
    Vec mu;
    double sigma;
    gp.predict(Vec::Zero(1), mu, sigma);
    REQUIRE(sigma > 0.9);
    REQUIRE(std::abs(mu[0]) < 0.1);
}

TEST_CASE("cholesky factor reconstructs the regularized kernel matrix") {
    auto rng = make_stream(79, 0);
    GpModel gp(3, 2, KernelHyper{0.8, 1.4, 0.02});
    for (int i = 0; i < 30; ++i) gp.add({rvec(rng, 3, -2, 2), rvec(rng, 2, -1, 1)});
    gp.refit();
    const int n = int(gp.size());
    Mat K(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            K(i, j) = oracle::se_kernel(gp.input(i), gp.input(j), 0.8, 1.4);
    K.diagonal().array() += 0.02;
    REQUIRE((gp.chol() * gp.chol().transpose() - K).norm() < 1e-8);
}

TEST_CASE("duplicate noise-free points trigger jitter escalation, not failure") {
    GpModel gp(1, 1, KernelHyper{1.0, 1.0, 0.0});
    Vec x(1), y(1);
    x << 0.5;
    y << 1.0;
    gp.add({x, y});
    gp.add({x, y});
    gp.add({x, y});
    REQUIRE_NOTHROW(gp.refit());
    Vec mu;
    double sigma;
    gp.predict(x, mu, sigma);
    REQUIRE(mu[0] == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("confidence band has the stated half width") {
    GpModel gp(1, 2, KernelHyper{1.0, 1.0, 0.04});
    auto [lo, hi] = gp.confidence(Vec::Zero(1), 2.0, true);
    // Empty model: predictive sigma = sqrt(1 + 0.04), centred on zero.
    double half = 2.0 * std::sqrt(1.04);
    REQUIRE(lo[0] == Catch::Approx(-half).margin(1e-12));
    REQUIRE(hi[1] == Catch::Approx(half).margin(1e-12));
    auto [lo2, hi2] = gp.confidence(Vec::Zero(1), 2.0, false);
    REQUIRE(hi2[0] == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("residual extraction inverts the nominal model") {
    NominalModel nom;
    nom.f = [](const Vec& s) { return Vec(2.0 * s); };
    nom.g = [](const Vec& s) {
        Mat g(int(s.size()), 1);
        g.setOnes();
        return g;
    };
    Vec s(2), a(1), s_next(2);
    s << 1.0, -0.5;
    a << 0.25;
    s_next << 2.5, -0.5;
    Residual r = extract_residual(s, a, s_next, nom);
    REQUIRE(r.s.isApprox(s));
    REQUIRE(r.d[0] == Catch::Approx(2.5 - 2.0 - 0.25).margin(1e-14));
    REQUIRE(r.d[1] == Catch::Approx(-0.5 + 1.0 - 0.25).margin(1e-14));
}

TEST_CASE("mismatched residual dimensions are rejected") {
    GpModel gp(2, 2, KernelHyper{});
    Vec x(3), y(2);
    x.setZero();
    y.setZero();
    REQUIRE_THROWS_AS(gp.add({x, y}), ConfigError);
    REQUIRE_THROWS_AS(GpModel(0, 1, KernelHyper{}), ConfigError);
    REQUIRE_THROWS_AS(GpModel(1, 1, KernelHyper{-1.0, 1.0, 0.0}), ConfigError);
}
