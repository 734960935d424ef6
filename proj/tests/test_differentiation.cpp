#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "tme/field.hpp"
#include "tme/model.hpp"

using namespace tme;

namespace {

Vec vec1(double x) {
    Vec v(1);
    v << x;
    return v;
}

}  // namespace

TEST_CASE("dual arithmetic propagates first and second derivatives") {
    // f(x) = x^2 tanh(x) at x = 0.8, nested dual vs hand derivative
    const double x = 0.8;
    Dual<Dual<double>> xd{{x, 1.0}, {1.0, 0.0}};
    auto f = xd * xd * tanh(xd);
    const double t = std::tanh(x);
    const double se = 1.0 - t * t;
    CHECK_THAT(f.v.v, Catch::Matchers::WithinRel(x * x * t, 1e-15));
    CHECK_THAT(f.v.d, Catch::Matchers::WithinRel(2 * x * t + x * x * se, 1e-14));
    CHECK_THAT(f.d.d, Catch::Matchers::WithinRel(2 * t + 4 * x * se + x * x * (-2 * t * se),
                                                 1e-13));
}

TEST_CASE("gradient of simple polynomials") {
    auto f = make_field(1, []<class S>(std::span<const S> x) -> S { return x[0] * x[0]; });
    CHECK(gradient(f, vec1(3.0))[0] == 6.0);

    auto g = make_field(1, []<class S>(std::span<const S> x) -> S {
        using std::tanh;
        return tanh(x[0]);
    });
    CHECK(gradient(g, vec1(0.0))[0] == 1.0);
}

TEST_CASE("gradient of Lorenz drift matches central finite differences") {
    auto model = make_lorenz63(10.0, 28.0, 2.0, 5.0);
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        Vec x = oracles::random_vec(rng, 3, 10.0);
        for (const auto& component : model.drift) {
            Vec g = gradient(component, x);
            Vec g_fd = oracles::fd_gradient([&](const Vec& p) { return component(p); }, x, 1e-5);
            CHECK(oracles::rel_err(g, g_fd) < 1e-6);
        }
    }
}

TEST_CASE("hessian basics and finite-difference oracle") {
    auto f = make_field(1, []<class S>(std::span<const S> x) -> S { return x[0] * x[0]; });
    Mat h = hessian(f, vec1(1.7));
    CHECK(h(0, 0) == 2.0);

    auto g = make_field(2, []<class S>(std::span<const S> x) -> S { return x[0] * x[1]; });
    Vec x2(2);
    x2 << 1.0, 1.0;
    Mat h2 = hessian(g, x2);
    CHECK(h2(0, 0) == 0.0);
    CHECK(h2(0, 1) == 1.0);
    CHECK(h2(1, 0) == 1.0);
    CHECK(h2(1, 1) == 0.0);

    auto th = make_field(1, []<class S>(std::span<const S> x) -> S {
        using std::tanh;
        return tanh(x[0]);
    });
    Mat ht = hessian(th, vec1(0.5));
    Mat ht_fd = oracles::fd_hessian([&](const Vec& p) { return th(p); }, vec1(0.5), 1e-4);
    CHECK(oracles::rel_err(ht, ht_fd) < 1e-5);
}

TEST_CASE("gradient/hessian of built-in drifts vs finite differences, randomized") {
    std::mt19937_64 rng(7);
    std::vector<DiffusionModel> models;
    models.push_back(make_lorenz63(10.0, 28.0, 2.0, 5.0));
    models.push_back(make_ou(1.3, 0.7));
    models.push_back(make_benes());
    for (const auto& model : models) {
        for (int trial = 0; trial < 10; ++trial) {
            Vec x = oracles::random_vec(rng, model.dim, 3.0);
            for (const auto& component : model.drift) {
                auto plain = [&](const Vec& p) { return component(p); };
                CHECK(oracles::rel_err(gradient(component, x),
                                       oracles::fd_gradient(plain, x, 1e-5)) < 1e-5);
                CHECK(oracles::rel_err(hessian(component, x),
                                       oracles::fd_hessian(plain, x, 1e-4)) < 1e-3);
            }
        }
    }
}

TEST_CASE("hessian output is exactly symmetric") {
    auto f = make_field(3, []<class S>(std::span<const S> x) -> S {
        using std::sin;
        return x[0] * x[1] * x[2] + sin(x[0] * x[2]);
    });
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Vec x = oracles::random_vec(rng, 3);
        Mat h = hessian(f, x);
        CHECK((h - h.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("nested fields: derivative composition") {
    // d = 1, f(x) = x; g(x) = f'(x) * x = x; g' = 1
    auto f = coordinate_field(1, 0);
    auto g = derivative(f, 0) * f;
    CHECK(gradient(g, vec1(2.5))[0] == 1.0);

    // OU drift a(x) = -theta x: h = a'(x) a(x) = theta^2 x, h' = theta^2
    const double theta = 1.7;
    auto model = make_ou(theta, 1.0);
    auto a = model.drift[0];
    auto h = derivative(a, 0) * a;
    CHECK_THAT(h(vec1(3.0)), Catch::Matchers::WithinRel(theta * theta * 3.0, 1e-14));
    CHECK_THAT(gradient(h, vec1(3.0))[0],
               Catch::Matchers::WithinRel(theta * theta, 1e-14));

    // Benes drift: sech^2 tanh + (1/2)(-2 sech^2 tanh) vanishes identically
    auto benes = make_benes();
    auto t = benes.drift[0];
    auto combo = derivative(t, 0) * t + 0.5 * derivative(derivative(t, 0), 0);
    for (double x : {-2.0, -0.3, 0.0, 0.9, 4.0}) {
        CHECK(combo(vec1(x)) == 0.0);
        CHECK_THAT(gradient(combo, vec1(x))[0], Catch::Matchers::WithinAbs(0.0, 1e-15));
    }
}

TEST_CASE("fields built from lambdas can nest differential queries") {
    // h(x) = a'(x) * a(x) built inside a generic lambda via partial_at
    const double theta = 0.9;
    auto model = make_ou(theta, 1.0);
    auto a = model.drift[0];
    auto h = make_field(1, [a]<class S>(std::span<const S> x) -> S {
        return partial_at(a, x, 0) * a(x);
    });
    CHECK_THAT(gradient(h, vec1(-1.2))[0],
               Catch::Matchers::WithinRel(theta * theta, 1e-14));
}

TEST_CASE("nesting to depth 4 matches closed forms on polynomials") {
    // f(x) = x^6; fourth derivative 360 x^2
    auto x6 = make_field(1, []<class S>(std::span<const S> x) -> S {
        S x2 = x[0] * x[0];
        return x2 * x2 * x2;
    });
    ScalarField d4 = x6;
    for (int i = 0; i < 4; ++i) d4 = derivative(d4, 0);
    for (double x : {-1.5, 0.25, 2.0}) {
        CHECK_THAT(d4(vec1(x)), Catch::Matchers::WithinRel(360.0 * x * x, 1e-12));
    }

    // mixed: f = x1^3 x2^2, d^2/dx1^2 then d^2/dx2^2 -> 12 x1
    auto f = make_field(2, []<class S>(std::span<const S> x) -> S {
        return x[0] * x[0] * x[0] * x[1] * x[1];
    });
    auto d = derivative(derivative(derivative(derivative(f, 0), 0), 1), 1);
    Vec x2(2);
    x2 << 1.3, -0.7;
    CHECK_THAT(d(x2), Catch::Matchers::WithinRel(12.0 * 1.3, 1e-12));
}

TEST_CASE("exceeding the nesting budget raises depth-exceeded") {
    auto f = make_field(1, []<class S>(std::span<const S> x) -> S { return x[0] * x[0]; });
    ScalarField d = f;
    for (int i = 0; i < 7; ++i) d = derivative(d, 0);
    CHECK_THROWS_AS(d(vec1(1.0)), DepthExceededError);  // needs level 7 > default 6

    // a raised budget allows it (tower permits up to level 8)
    EvalContext ctx{8};
    CHECK(d(std::span<const double>(vec1(1.0).data(), 1), ctx) == 0.0);

    // beyond the tower no budget helps
    ScalarField d9 = f;
    for (int i = 0; i < 9; ++i) d9 = derivative(d9, 0);
    CHECK_THROWS_AS(d9(std::span<const double>(vec1(1.0).data(), 1), ctx),
                    DepthExceededError);
}

TEST_CASE("dimension mismatches and NaN propagation are rejected") {
    auto f = make_field(2, []<class S>(std::span<const S> x) -> S { return x[0] + x[1]; });
    CHECK_THROWS_AS(gradient(f, vec1(1.0)), DimensionError);

    auto bad = make_field(1, []<class S>(std::span<const S> x) -> S {
        using std::sqrt;
        return sqrt(x[0]);  // NaN for negative arguments
    });
    CHECK_THROWS_AS(gradient(bad, vec1(-1.0)), EvaluationError);
    CHECK_THROWS_AS(hessian(bad, vec1(-1.0)), EvaluationError);
}

TEST_CASE("field evaluation is deterministic") {
    auto model = make_lorenz63(10.0, 28.0, 2.0, 5.0);
    Vec x(3);
    x << 1.1, -2.2, 3.3;
    for (const auto& component : model.drift) {
        const double a = component(x);
        const double b = component(x);
        CHECK(a == b);
        Vec g1 = gradient(component, x);
        Vec g2 = gradient(component, x);
        CHECK((g1.array() == g2.array()).all());
    }
}
