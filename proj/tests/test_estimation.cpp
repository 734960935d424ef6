#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "support/oracles.hpp"
#include "tme/ekf.hpp"
#include "tme/simulate.hpp"
#include "tme/smoother.hpp"

using namespace tme;

namespace {

Vec vec1(double x) {
    Vec v(1);
    v << x;
    return v;
}

struct Fixture {
    Mat f{2, 2}, l{2, 2};
    DiffusionModel model;
    LinearSde sde;
    MeasurementModel meas;
    InitialLaw init;
    ObservationSchedule schedule;
    std::vector<Vec> data;

    explicit Fixture(int steps = 50, double dt = 0.1) {
        f << 0.0, 1.0, -4.0, -0.6;
        l << 0.3, 0.0, 0.0, 0.5;
        model = make_linear(f, l);
        sde = LinearSde{f, l};
        Mat xi(1, 1);
        xi << 0.64;
        meas = measure_coordinate(2, 0, 0.64);
        Vec m0(2);
        m0 << 1.0, 0.0;
        init = make_initial_law(m0, 0.5 * Mat::Identity(2, 2));
        schedule = uniform_schedule(0.0, dt, steps);
        SimConfig sim{model, meas, init, schedule, 50, 1234, 0};
        auto rec = simulate_experiment(sim);
        data = rec.data;
    }

    /// TME-2 transition moments in closed form (constant for linear SDE).
    void tme2_discrete(double dt, Mat& a, Mat& q) const {
        Mat gamma = l * l.transpose();
        a = Mat::Identity(2, 2) + f * dt + f * f * dt * dt / 2.0;
        q = gamma * dt + (f * gamma + gamma * f.transpose()) * dt * dt / 2.0;
    }
};

}  // namespace

TEST_CASE("predict with zero covariance collapses the integrals") {
    auto model = make_lorenz63(10.0, 28.0, 2.0, 5.0);
    TmeScheme scheme(model, TmeOrder(1));
    auto rule = gauss_hermite_rule(3, 3);
    Vec x(3);
    x << 1.0, -2.0, 20.0;
    GaussianState state{x, Mat::Zero(3, 3)};
    const double dt = 0.05;
    auto pred = predict(scheme, rule, state, dt);
    Vec want_mean = x;
    want_mean += dt * drift_at(model, x);
    CHECK(oracles::rel_err(pred.state.mean, want_mean) < 1e-13);
    CHECK(oracles::rel_err(pred.state.cov, Mat(diffusion_matrix(model, x) * dt)) < 1e-12);
    CHECK(pred.cross.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("predict with LinearExact on OU reproduces the exact mean") {
    auto sde = LinearSde{-1.3 * Mat::Identity(1, 1), 0.7 * Mat::Identity(1, 1)};
    LinearExactScheme scheme(sde);
    auto rule = gauss_hermite_rule(1, 3);
    GaussianState state{vec1(2.0), Mat::Zero(1, 1)};
    auto pred = predict(scheme, rule, state, 0.3);
    CHECK_THAT(pred.state.mean[0],
               Catch::Matchers::WithinRel(oracles::ou_exact_mean(1.3, 2.0, 0.3), 1e-12));
    CHECK_THAT(pred.state.cov(0, 0),
               Catch::Matchers::WithinRel(oracles::ou_exact_var(1.3, 0.7, 0.3), 1e-12));
}

TEST_CASE("LinearExact discretization matches the series matrix exponential") {
    Fixture fx;
    LinearExactScheme scheme(fx.sde);
    Mat a, q;
    scheme.discretize(0.1, a, q);
    Mat a_ref = oracles::expm_series(fx.f * 0.1);
    CHECK(oracles::rel_err(a, a_ref) < 1e-12);
    // Q solves the finite-horizon Lyapunov integral; check via fine Riemann sum
    Mat q_ref = Mat::Zero(2, 2);
    const int n = 20000;
    const double h = 0.1 / n;
    Mat gamma = fx.l * fx.l.transpose();
    for (int i = 0; i < n; ++i) {
        Mat e = oracles::expm_series(fx.f * ((i + 0.5) * h));
        q_ref += e * gamma * e.transpose() * h;
    }
    CHECK(oracles::rel_err(q, q_ref) < 1e-8);
}

TEST_CASE("predict matches exact Kalman prediction through LinearExact") {
    Fixture fx;
    LinearExactScheme scheme(fx.sde);
    auto rule = gauss_hermite_rule(2, 3);
    Vec m(2);
    m << 0.7, -0.4;
    Mat p(2, 2);
    p << 0.5, 0.1, 0.1, 0.8;
    auto pred = predict(scheme, rule, {m, p}, 0.1);
    Mat a, q;
    scheme.discretize(0.1, a, q);
    CHECK(oracles::rel_err(pred.state.mean, Vec(a * m)) < 1e-10);
    CHECK(oracles::rel_err(pred.state.cov, Mat(a * p * a.transpose() + q)) < 1e-10);
    CHECK(oracles::rel_err(pred.cross, Mat(p * a.transpose())) < 1e-10);
}

TEST_CASE("update: hand Kalman arithmetic in 1d") {
    auto meas = measure_coordinate(1, 0, 1.0);
    auto rule = gauss_hermite_rule(1, 3);
    GaussianState predicted{Vec::Zero(1), Mat::Identity(1, 1)};
    Vec y = vec1(2.0);
    auto post = update(predicted, y, meas, rule);
    CHECK_THAT(post.mean[0], Catch::Matchers::WithinRel(1.0, 1e-12));
    CHECK_THAT(post.cov(0, 0), Catch::Matchers::WithinRel(0.5, 1e-12));
}

TEST_CASE("update with uninformative measurement keeps the prior") {
    auto meas = measure_coordinate(2, 0, 1e12);
    auto rule = gauss_hermite_rule(2, 3);
    Vec m(2);
    m << 1.4, -0.3;
    Mat p(2, 2);
    p << 1.0, 0.2, 0.2, 0.7;
    auto post = update({m, p}, vec1(100.0), meas, rule);
    CHECK(oracles::rel_err(post.mean, m) < 1e-3);
    CHECK(oracles::rel_err(post.cov, p) < 1e-3);
}

TEST_CASE("run_filter with T=0 returns only the initial law") {
    Fixture fx(0);
    LinearExactScheme scheme(fx.sde);
    auto rule = gauss_hermite_rule(2, 3);
    auto fr = run_filter(scheme, rule, fx.meas, fx.schedule, {}, fx.init);
    CHECK(fr.steps() == 0);
    CHECK((fr.init.mean.array() == fx.init.mean.array()).all());
}

TEST_CASE("run_filter rejects mismatched data length") {
    Fixture fx(3);
    LinearExactScheme scheme(fx.sde);
    auto rule = gauss_hermite_rule(2, 3);
    std::vector<Vec> short_data{vec1(0.1)};
    CHECK_THROWS_AS(run_filter(scheme, rule, fx.meas, fx.schedule, short_data, fx.init),
                    DimensionError);
}

TEST_CASE("sigma-point filter/smoother match closed-form Kalman/RTS on the linear fixture") {
    Fixture fx;
    // exact-oracle route: textbook Kalman/RTS with the same TME-2 transition
    Mat a, q;
    fx.tme2_discrete(0.1, a, q);
    Mat h(1, 2);
    h << 1.0, 0.0;
    Mat r(1, 1);
    r << 0.64;
    auto kf = oracles::kalman_filter(a, q, h, r, fx.init.mean, fx.init.cov, fx.data);
    auto rts = oracles::rts_smoother(a, kf);

    TmeScheme scheme(fx.model, TmeOrder(2));
    auto rule = gauss_hermite_rule(2, 3);
    auto fr = run_filter(scheme, rule, fx.meas, fx.schedule, fx.data, fx.init);
    auto sr = smooth(fr);

    for (int k = 0; k < fr.steps(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        CHECK(oracles::rel_err(fr.filtered[ku].mean, kf[ku].m_filt) < 1e-8);
        CHECK(oracles::rel_err(fr.filtered[ku].cov, kf[ku].p_filt) < 1e-8);
        CHECK(oracles::rel_err(sr.smoothed[ku].mean, rts[ku].m_smooth) < 1e-8);
        CHECK(oracles::rel_err(sr.smoothed[ku].cov, rts[ku].p_smooth) < 1e-8);
    }

    // smoothed covariance trace never exceeds filtered
    for (int k = 0; k < fr.steps(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        CHECK(sr.smoothed[ku].cov.trace() <= fr.filtered[ku].cov.trace() + 1e-12);
    }
}

TEST_CASE("smoother terminal identity and trivial cases") {
    Fixture fx(1);
    TmeScheme scheme(fx.model, TmeOrder(2));
    auto rule = gauss_hermite_rule(2, 3);
    auto fr = run_filter(scheme, rule, fx.meas, fx.schedule, fx.data, fx.init);
    auto sr = smooth(fr);
    REQUIRE(sr.smoothed.size() == 1);
    CHECK((sr.smoothed[0].mean.array() == fr.filtered[0].mean.array()).all());
    CHECK((sr.smoothed[0].cov.array() == fr.filtered[0].cov.array()).all());

    Fixture fx2(10);
    auto fr2 = run_filter(scheme, rule, fx2.meas, fx2.schedule, fx2.data, fx2.init);
    // zero cross-covariances => smoother equals filter
    for (auto& cm : fr2.cross) cm.setZero();
    auto sr2 = smooth(fr2);
    for (int k = 0; k < fr2.steps(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        CHECK((sr2.smoothed[ku].mean.array() == fr2.filtered[ku].mean.array()).all());
        CHECK(oracles::rel_err(sr2.smoothed[ku].cov, fr2.filtered[ku].cov) < 1e-15);
    }
    // terminal state is a bit-exact copy
    auto sr3 = smooth(fr2);
    const auto last = static_cast<std::size_t>(fr2.steps() - 1);
    CHECK((sr3.smoothed[last].mean.array() == fr2.filtered[last].mean.array()).all());
    CHECK((sr3.smoothed[last].cov.array() == fr2.filtered[last].cov.array()).all());
}

TEST_CASE("smooth_with a matching scheme equals smooth on stored predictions") {
    Fixture fx(20);
    TmeScheme scheme(fx.model, TmeOrder(2));
    auto rule = gauss_hermite_rule(2, 3);
    auto fr = run_filter(scheme, rule, fx.meas, fx.schedule, fx.data, fx.init);
    auto a = smooth(fr);
    auto b = smooth_with(scheme, rule, fr);
    for (int k = 0; k < fr.steps(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        CHECK((a.smoothed[ku].mean.array() == b.smoothed[ku].mean.array()).all());
        CHECK((a.smoothed[ku].cov.array() == b.smoothed[ku].cov.array()).all());
    }
}

TEST_CASE("scheme equivalence: TME(1) and Euler-Maruyama filters are bit-identical") {
    auto model = make_lorenz63(10.0, 28.0, 2.0, 5.0);
    auto meas = measure_coordinate(3, 0, 2.0);
    auto init = make_initial_law(Vec::Zero(3), Mat::Identity(3, 3));
    auto schedule = uniform_schedule(0.0, 0.02, 40);
    auto rule = gauss_hermite_rule(3, 3);
    TmeScheme tme1(model, TmeOrder(1));
    EulerMaruyamaScheme em(model);
    for (std::uint64_t run = 0; run < 10; ++run) {
        SimConfig sim{model, meas, init, schedule, 100, 99, run};
        auto rec = simulate_experiment(sim);
        auto fr_tme = run_filter(tme1, rule, meas, schedule, rec.data, init);
        auto fr_em = run_filter(em, rule, meas, schedule, rec.data, init);
        REQUIRE(fr_tme.steps() == fr_em.steps());
        for (int k = 0; k < fr_tme.steps(); ++k) {
            const auto ku = static_cast<std::size_t>(k);
            CHECK((fr_tme.filtered[ku].mean.array() == fr_em.filtered[ku].mean.array()).all());
            CHECK((fr_tme.filtered[ku].cov.array() == fr_em.filtered[ku].cov.array()).all());
            CHECK((fr_tme.predicted[ku].mean.array() == fr_em.predicted[ku].mean.array()).all());
            CHECK((fr_tme.predicted[ku].cov.array() == fr_em.predicted[ku].cov.array()).all());
            CHECK((fr_tme.cross[ku].array() == fr_em.cross[ku].array()).all());
        }
    }
}

TEST_CASE("GHF-TME-2 runs the Lorenz benchmark without PSD failure over seeded runs") {
    auto model = make_lorenz63(10.0, 28.0, 2.0, 5.0);
    auto meas = measure_coordinate(3, 0, 2.0);
    auto init = make_initial_law(Vec::Zero(3), Mat::Identity(3, 3));
    auto schedule = uniform_schedule(0.0, 0.02, 100);
    auto rule = gauss_hermite_rule(3, 3);
    TmeScheme scheme(model, TmeOrder(2));
    for (std::uint64_t run = 0; run < 100; ++run) {
        SimConfig sim{model, meas, init, schedule, 100, 2024, run};
        auto rec = simulate_experiment(sim);
        CHECK_NOTHROW(run_filter(scheme, rule, meas, schedule, rec.data, init));
    }
}

TEST_CASE("rk4 moment step: OU mean converges at order 5 per step") {
    auto model = make_ou(1.0, 0.5);
    std::vector<double> hs, errs;
    for (double h : {0.4, 0.2, 0.1, 0.05}) {
        Vec m = vec1(1.0);
        Mat p = Mat::Zero(1, 1);
        rk4_moment_step(model, m, p, h);
        hs.push_back(h);
        errs.push_back(std::abs(m[0] - oracles::ou_exact_mean(1.0, 1.0, h)));
    }
    const double slope = oracles::loglog_slope(hs, errs);
    INFO("rk4 per-step slope " << slope);
    CHECK(slope > 4.7);
    CHECK(slope < 5.3);
}

TEST_CASE("rk4 moment step: zero drift grows covariance linearly") {
    std::vector<ScalarField> drift{constant_field(1, 0.0)};
    std::vector<std::vector<ScalarField>> disp{{constant_field(1, 0.8)}};
    auto model = make_diffusion_model(1, 1, drift, disp);
    Vec m = vec1(0.3);
    Mat p = 0.2 * Mat::Identity(1, 1);
    rk4_moment_step(model, m, p, 0.5);
    CHECK_THAT(m[0], Catch::Matchers::WithinRel(0.3, 1e-14));
    CHECK_THAT(p(0, 0), Catch::Matchers::WithinRel(0.2 + 0.64 * 0.5, 1e-13));
}

TEST_CASE("ekf filter approaches exact Kalman on the linear fixture") {
    Fixture fx(30);
    LinearExactScheme exact(fx.sde);
    Mat a, q;
    exact.discretize(0.1, a, q);
    Mat h(1, 2);
    h << 1.0, 0.0;
    Mat r(1, 1);
    r << 0.64;
    auto kf = oracles::kalman_filter(a, q, h, r, fx.init.mean, fx.init.cov, fx.data);
    auto fr = ekf_rk4_filter(fx.model, fx.meas, fx.schedule, fx.data, fx.init, 100);
    for (int k = 0; k < fr.steps(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        CHECK(oracles::rel_err(fr.filtered[ku].mean, kf[ku].m_filt) < 1e-6);
        CHECK(oracles::rel_err(fr.filtered[ku].cov, kf[ku].p_filt) < 1e-6);
    }
    // EKS approaches the exact RTS smoother; the composed-Jacobian cross
    // covariance is first order in the substep, so the gap shrinks with n_sub
    auto rts = oracles::rts_smoother(a, kf);
    auto gap = [&](int n_sub) {
        auto sr = eks_rk4_smoother(fx.model, fr, n_sub);
        double worst = 0.0;
        for (int k = 0; k < fr.steps(); ++k) {
            const auto ku = static_cast<std::size_t>(k);
            worst = std::max(worst, oracles::rel_err(sr.smoothed[ku].mean, rts[ku].m_smooth));
            worst = std::max(worst, oracles::rel_err(sr.smoothed[ku].cov, rts[ku].p_smooth));
        }
        return worst;
    };
    const double gap100 = gap(100);
    const double gap400 = gap(400);
    CHECK(gap100 < 2e-3);
    CHECK(gap400 < gap100 / 2.0);
}

TEST_CASE("filter errors carry the failing step index") {
    Fixture fx(5);
    TmeScheme scheme(fx.model, TmeOrder(2));
    auto rule = gauss_hermite_rule(2, 3);
    // poison measurement 3 with NaN
    auto data = fx.data;
    data[2] = vec1(std::numeric_limits<double>::quiet_NaN());
    try {
        run_filter(scheme, rule, fx.meas, fx.schedule, data, fx.init);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("step 3") != std::string::npos);
    }
}
