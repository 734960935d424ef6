#pragma once

#include <memory>
#include <string>
#include <unsupported/Eigen/MatrixFunctions>

#include "tme/moments.hpp"

namespace tme {

/// Supplies the one-step transition moments g(x) = E[X_{k+1} | x] and
/// Q(x) = Cov[X_{k+1} | x] for the filter prediction and the smoother
/// cross-moments.
class MomentScheme {
public:
    virtual ~MomentScheme() = default;
    virtual int dim() const = 0;
    virtual std::string name() const = 0;
    virtual void moments(const Vec& x, double dt, Vec& g, Mat& q) const = 0;
};

/// Order-M Taylor moment expansion of the transition moments. The generator
/// iterates are built once at construction and reused for every evaluation;
/// evaluation is pure, so one scheme may serve concurrent runs.
class TmeScheme final : public MomentScheme {
    DiffusionModel model_;
    GeneratorIterates iterates_;
    EvalContext ctx_;
    int order_;

public:
    TmeScheme(DiffusionModel model, TmeOrder order)
        : model_(std::move(model)),
          iterates_(build_generator_iterates(model_, order.value())),
          ctx_{std::max(kDefaultMaxNest, 2 * order.value())},
          order_(order.value()) {}

    int dim() const override { return model_.dim; }
    int order() const { return order_; }
    std::string name() const override { return "tme-" + std::to_string(order_); }

    void moments(const Vec& x, double dt, Vec& g, Mat& q) const override {
        if (!(dt > 0.0)) throw ConfigError("moment scheme requires dt > 0");
        auto v = eval_iterates(iterates_, x, ctx_);
        g = detail::mean_from_values(v, order_, dt);
        q = detail::cov_from_values(v, diffusion_matrix(model_, x), order_, dt);
    }
};

/// Euler-Maruyama moment matching: g = x + a(x) dt, Q = b b^T dt. Produces
/// bit-identical moments to TmeScheme at order 1.
class EulerMaruyamaScheme final : public MomentScheme {
    DiffusionModel model_;

public:
    explicit EulerMaruyamaScheme(DiffusionModel model) : model_(std::move(model)) {}
    int dim() const override { return model_.dim; }
    std::string name() const override { return "em"; }

    void moments(const Vec& x, double dt, Vec& g, Mat& q) const override {
        if (!(dt > 0.0)) throw ConfigError("moment scheme requires dt > 0");
        g = x;
        double coeff = dt;
        g += coeff * drift_at(model_, x);
        q = ensure_psd(diffusion_matrix(model_, x) * dt);
    }
};

/// Exact transition moments of a linear SDE dX = F X dt + L dW:
/// g = expm(F dt) x, and Q from the van Loan block-exponential construction.
class LinearExactScheme final : public MomentScheme {
    Mat f_;
    Mat diff_;  // L L^T

public:
    explicit LinearExactScheme(const LinearSde& sde)
        : f_(sde.F), diff_(sde.L * sde.L.transpose()) {}
    int dim() const override { return static_cast<int>(f_.rows()); }
    std::string name() const override { return "linear-exact"; }

    /// Transition matrix and noise covariance over one step.
    void discretize(double dt, Mat& a, Mat& q) const {
        const int d = dim();
        Mat block = Mat::Zero(2 * d, 2 * d);
        block.topLeftCorner(d, d) = -f_;
        block.topRightCorner(d, d) = diff_;
        block.bottomRightCorner(d, d) = f_.transpose();
        Mat e = (block * dt).exp();
        a = e.bottomRightCorner(d, d).transpose();
        q = a * e.topRightCorner(d, d);
        q = 0.5 * (q + q.transpose()).eval();
    }

    void moments(const Vec& x, double dt, Vec& g, Mat& q) const override {
        if (!(dt > 0.0)) throw ConfigError("moment scheme requires dt > 0");
        Mat a;
        discretize(dt, a, q);
        g = a * x;
    }
};

}  // namespace tme
