#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "support/oracles.hpp"
#include "tme/model.hpp"

using namespace tme;

TEST_CASE("lorenz63 drift values") {
    auto model = make_lorenz63(10.0, 28.0, 2.0, 5.0);
    Vec zero = Vec::Zero(3);
    CHECK(drift_at(model, zero).cwiseAbs().maxCoeff() == 0.0);

    Vec x(3);
    x << 1.0, 1.0, 1.0;
    Vec a = drift_at(model, x);
    CHECK(a[0] == 0.0);
    CHECK(a[1] == 26.0);
    CHECK(a[2] == -1.0);
}

TEST_CASE("lorenz63 drift is bit-identical to plain arithmetic") {
    const double kappa = 10.0, lambda = 28.0, mu = 2.0;
    auto model = make_lorenz63(kappa, lambda, mu, 5.0);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Vec x = oracles::random_vec(rng, 3, 30.0);
        Vec a = drift_at(model, x);
        CHECK(a[0] == kappa * (x[1] - x[0]));
        CHECK(a[1] == x[0] * (lambda - x[2]) - x[1]);
        CHECK(a[2] == x[0] * x[1] - mu * x[2]);
    }
}

TEST_CASE("lorenz63 rejects non-positive sigma") {
    CHECK_THROWS_AS(make_lorenz63(10.0, 28.0, 2.0, 0.0), ConfigError);
    CHECK_THROWS_AS(make_lorenz63(10.0, 28.0, 2.0, -1.0), ConfigError);
}

TEST_CASE("ou model") {
    auto model = make_ou(1.0, 2.0);
    Vec x(1);
    x << 2.0;
    CHECK(drift_at(model, x)[0] == -2.0);
    CHECK(diffusion_matrix(model, x)(0, 0) == 4.0);
    CHECK_THROWS_AS(make_ou(0.0, 1.0), ConfigError);
    CHECK_THROWS_AS(make_ou(1.0, -0.5), ConfigError);
}

TEST_CASE("benes model") {
    auto model = make_benes();
    Vec x(1);
    x << 0.0;
    CHECK(drift_at(model, x)[0] == 0.0);
    x << 10.0;
    CHECK_THAT(drift_at(model, x)[0], Catch::Matchers::WithinAbs(1.0, 1e-8));
    for (double v : {-5.0, -0.1, 0.7, 3.0}) {
        x << v;
        CHECK(diffusion_matrix(model, x)(0, 0) == 1.0);
    }
}

TEST_CASE("diffusion matrix is symmetric PSD for all models at random points") {
    std::vector<DiffusionModel> models;
    models.push_back(make_lorenz63(10.0, 28.0, 2.0, 5.0));
    models.push_back(make_ou(1.3, 0.7));
    models.push_back(make_benes());
    // state-dependent dispersion exercises the non-constant path
    std::vector<ScalarField> drift{make_field(1, []<class S>(std::span<const S> x) -> S {
        return -x[0];
    })};
    std::vector<std::vector<ScalarField>> disp{{make_field(1, []<class S>(std::span<const S> x)
                                                               -> S { return 1.0 + x[0] * x[0]; })}};
    models.push_back(make_diffusion_model(1, 1, drift, disp, "statedep"));

    std::mt19937_64 rng(5);
    for (const auto& model : models) {
        for (int trial = 0; trial < 20; ++trial) {
            Vec x = oracles::random_vec(rng, model.dim, 8.0);
            Mat g = diffusion_matrix(model, x);
            CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
            Eigen::SelfAdjointEigenSolver<Mat> es(g);
            CHECK(es.eigenvalues().minCoeff() >= 0.0);
        }
    }

    // lorenz: 25 I at every x
    Vec x(3);
    x << 4.0, -3.0, 17.0;
    Mat g = diffusion_matrix(models[0], x);
    CHECK((g - 25.0 * Mat::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linear model drift matches F x") {
    Mat f(2, 2), l(2, 2);
    f << 0.0, 1.0, -4.0, -0.6;
    l << 0.3, 0.0, 0.0, 0.5;
    auto model = make_linear(f, l);
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        Vec x = oracles::random_vec(rng, 2);
        CHECK(oracles::rel_err(drift_at(model, x), Vec(f * x)) < 1e-15);
    }
    Vec x0 = Vec::Zero(2);
    CHECK(oracles::rel_err(diffusion_matrix(model, x0), Mat(l * l.transpose())) == 0.0);
}

TEST_CASE("measurement model validation") {
    auto meas = measure_coordinate(3, 0, 2.0);
    Vec x(3);
    x << 1.5, 2.5, 3.5;
    CHECK(measurement_at(meas, x)[0] == 1.5);

    Mat asym(2, 2);
    asym << 1.0, 0.5, -0.5, 1.0;
    std::vector<ScalarField> h{coordinate_field(2, 0), coordinate_field(2, 1)};
    CHECK_THROWS_AS(make_measurement_model(2, h, asym), NotPsdError);

    Mat indef(2, 2);
    indef << 1.0, 0.0, 0.0, -1.0;
    CHECK_THROWS_AS(make_measurement_model(2, h, indef), NotPsdError);

    // zero noise is allowed (semidefinite)
    Mat zero = Mat::Zero(2, 2);
    CHECK_NOTHROW(make_measurement_model(2, h, zero));
}

TEST_CASE("initial law validation") {
    Vec m = Vec::Zero(2);
    Mat indef(2, 2);
    indef << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(make_initial_law(m, indef), NotPsdError);
    CHECK_NOTHROW(make_initial_law(m, Mat::Identity(2, 2)));
}

TEST_CASE("observation schedule enforces strict increase") {
    CHECK_THROWS_AS(ObservationSchedule(0.0, {0.0}), ScheduleError);       // t1 == t0
    CHECK_THROWS_AS(ObservationSchedule(0.0, {0.1, 0.1}), ScheduleError);  // coincident
    CHECK_THROWS_AS(ObservationSchedule(0.0, {0.2, 0.1}), ScheduleError);  // decreasing

    auto sched = uniform_schedule(0.0, 0.02, 100);
    CHECK(sched.size() == 100);
    CHECK(sched.time(0) == 0.02);
    CHECK(sched.time(99) == 100 * 0.02);
    CHECK_THAT(sched.dt(57), Catch::Matchers::WithinRel(0.02, 1e-12));

    // irregular sampling is supported
    ObservationSchedule irregular(0.0, {0.1, 0.15, 0.4});
    CHECK(irregular.dt(0) == 0.1);
    CHECK_THAT(irregular.dt(2), Catch::Matchers::WithinRel(0.25, 1e-12));
}
