#pragma once

#include <Eigen/Dense>

#include "tme/generator.hpp"

namespace tme {

inline constexpr int kDefaultMaxOrder = 3;

/// Expansion order M of the transition-moment approximation. Orders above
/// the default maximum are accepted only when the nesting tower permits
/// (two derivative levels per generator application).
class TmeOrder {
    int value_;

public:
    explicit TmeOrder(int value, int max_order = kDefaultMaxOrder) : value_(value) {
        if (value < 1 || value > max_order)
            throw ConfigError("expansion order must lie in [1, " + std::to_string(max_order) +
                              "]");
        if (2 * max_order > kMaxTowerLevel)
            throw ConfigError("configured maximum order exceeds the derivative tower");
    }
    int value() const { return value_; }
};

/// Symmetrizes Q and clips eigenvalues below eps = 1e-12 * max(1, trace/d).
/// Returns the symmetrized input unchanged when no eigenvalue needs lifting.
inline Mat ensure_psd(const Mat& q) {
    const int d = static_cast<int>(q.rows());
    Mat sym = 0.5 * (q + q.transpose());
    const double eps = 1e-12 * std::max(1.0, sym.trace() / d);
    Eigen::SelfAdjointEigenSolver<Mat> es(sym);
    if (es.eigenvalues().minCoeff() >= eps) return sym;
    Vec clipped = es.eigenvalues().cwiseMax(eps);
    Mat repaired = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (repaired + repaired.transpose());
}

namespace detail {

inline Mat unpack_symmetric(int d, const Vec& packed) {
    Mat m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            m(i, j) = packed[packed_index(d, i, j)];
            m(j, i) = m(i, j);
        }
    return m;
}

inline double binomial(int n, int k) {
    double acc = 1.0;
    for (int i = 1; i <= k; ++i) acc = acc * (n - k + i) / i;
    return acc;
}

/// Phi_r from iterate values via the binomial cross-term formula.
inline Mat phi_r_from_values(const IterateValues& v, int d, int r) {
    Mat phi = unpack_symmetric(d, v.square[static_cast<std::size_t>(r)]);
    for (int k = 0; k <= r; ++k) {
        const double coeff = binomial(r, k);
        const Vec& u = v.mean[static_cast<std::size_t>(k)];
        const Vec& w = v.mean[static_cast<std::size_t>(r - k)];
        phi.noalias() -= coeff * (u * w.transpose());
    }
    return 0.5 * (phi + phi.transpose()).eval();
}

inline Vec mean_from_values(const IterateValues& v, int order, double dt) {
    Vec g = v.mean[0];
    double coeff = 1.0;
    for (int r = 1; r <= order; ++r) {
        coeff *= dt / r;
        g += coeff * v.mean[static_cast<std::size_t>(r)];
    }
    return g;
}

/// Q^M before PSD repair. The r = 1 term reduces to b b^T identically (the
/// drift cross-terms cancel), so it is taken from `gamma` directly; this
/// also makes the order-1 moments coincide bit for bit with Euler-Maruyama
/// moment matching.
inline Mat cov_raw_from_values(const IterateValues& v, const Mat& gamma, int order, double dt) {
    const int d = static_cast<int>(gamma.rows());
    Mat q = gamma * dt;
    double coeff = dt;
    for (int r = 2; r <= order; ++r) {
        coeff *= dt / r;
        q += coeff * phi_r_from_values(v, d, r);
    }
    return q;
}

inline Mat cov_from_values(const IterateValues& v, const Mat& gamma, int order, double dt) {
    return ensure_psd(cov_raw_from_values(v, gamma, order, dt));
}

}  // namespace detail

/// g^M(x): order-M expansion of the conditional mean E[X(t+dt) | x].
inline Vec tme_mean(const GeneratorIterates& it, const Vec& x, double dt,
                    const EvalContext& ctx = {}) {
    if (!(dt > 0.0)) throw ConfigError("tme_mean requires dt > 0");
    return detail::mean_from_values(eval_iterates(it, x, ctx), it.order, dt);
}

inline Vec tme_mean(const DiffusionModel& model, const TmeOrder& order, const Vec& x,
                    double dt) {
    return tme_mean(build_generator_iterates(model, order.value()), x, dt);
}

/// Phi_r(x): the r-th covariance expansion coefficient, symmetrized. This is
/// the reference binomial formula for every r >= 1.
inline Mat tme_phi_r(const DiffusionModel& model, int r, const Vec& x) {
    if (r < 1) throw ConfigError("tme_phi_r requires r >= 1");
    if (2 * r > kMaxTowerLevel)
        throw ConfigError("tme_phi_r: order exceeds the derivative tower");
    auto it = build_generator_iterates(model, r);
    auto v = eval_iterates(it, x, EvalContext{2 * r});
    return detail::phi_r_from_values(v, model.dim, r);
}

/// Q^M(x): order-M expansion of the conditional covariance, PSD-repaired.
inline Mat tme_cov(const GeneratorIterates& it, const DiffusionModel& model, const Vec& x,
                   double dt, const EvalContext& ctx = {}) {
    if (!(dt > 0.0)) throw ConfigError("tme_cov requires dt > 0");
    auto v = eval_iterates(it, x, ctx);
    return detail::cov_from_values(v, diffusion_matrix(model, x), it.order, dt);
}

inline Mat tme_cov(const DiffusionModel& model, const TmeOrder& order, const Vec& x,
                   double dt) {
    return tme_cov(build_generator_iterates(model, order.value()), model, x, dt);
}

}  // namespace tme
