#pragma once

#include "tme/smoother.hpp"

namespace tme {

/// Jacobian of the drift, rows J(i,:) = grad a_i(x)^T.
inline Mat drift_jacobian(const DiffusionModel& model, const Vec& x,
                          const EvalContext& ctx = {}) {
    const int d = model.dim;
    Mat j(d, d);
    auto xs = std::span<const double>(x.data(), static_cast<std::size_t>(x.size()));
    for (int col = 0; col < d; ++col)
        for (int row = 0; row < d; ++row)
            j(row, col) = lift_eval(model.drift[static_cast<std::size_t>(row)].impl(), xs, col,
                                    ctx).d;
    return j;
}

inline Mat measurement_jacobian(const MeasurementModel& meas, const Vec& x,
                                const EvalContext& ctx = {}) {
    Mat j(meas.meas_dim, meas.state_dim);
    auto xs = std::span<const double>(x.data(), static_cast<std::size_t>(x.size()));
    for (int col = 0; col < meas.state_dim; ++col)
        for (int row = 0; row < meas.meas_dim; ++row)
            j(row, col) = lift_eval(meas.h[static_cast<std::size_t>(row)].impl(), xs, col,
                                    ctx).d;
    return j;
}

namespace detail {

struct MomentDeriv {
    Vec dm;
    Mat dp;
};

/// Right-hand side of the linearized moment ODEs
/// dm/dt = a(m), dP/dt = J_a(m) P + P J_a(m)^T + b(m) b(m)^T.
inline MomentDeriv moment_ode_rhs(const DiffusionModel& model, const Vec& m, const Mat& p) {
    MomentDeriv d;
    d.dm = drift_at(model, m);
    Mat j = drift_jacobian(model, m);
    d.dp = j * p + p * j.transpose() + diffusion_matrix(model, m);
    return d;
}

}  // namespace detail

/// One classical RK4 step of the moment ODEs.
inline void rk4_moment_step(const DiffusionModel& model, Vec& m, Mat& p, double h) {
    auto k1 = detail::moment_ode_rhs(model, m, p);
    auto k2 = detail::moment_ode_rhs(model, m + 0.5 * h * k1.dm, p + 0.5 * h * k1.dp);
    auto k3 = detail::moment_ode_rhs(model, m + 0.5 * h * k2.dm, p + 0.5 * h * k2.dp);
    auto k4 = detail::moment_ode_rhs(model, m + h * k3.dm, p + h * k3.dp);
    m += (h / 6.0) * (k1.dm + 2.0 * k2.dm + 2.0 * k3.dm + k4.dm);
    p += (h / 6.0) * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
}

inline constexpr int kDefaultEkfSubsteps = 10;

/// Continuous-time prediction by RK4 integration of the moment ODEs over
/// n_sub substeps. The cross-covariance uses the composed first-order mean
/// transition Jacobian (I + J_a h per substep), a baseline-only
/// approximation.
inline Prediction ekf_rk4_predict(const DiffusionModel& model, const GaussianState& state,
                                  double dt, int n_sub = kDefaultEkfSubsteps) {
    if (!(dt > 0.0)) throw ConfigError("ekf predict requires dt > 0");
    if (n_sub < 1) throw ConfigError("ekf predict requires n_sub >= 1");
    const double h = dt / n_sub;
    Vec m = state.mean;
    Mat p = state.cov;
    Mat a = Mat::Identity(model.dim, model.dim);
    for (int i = 0; i < n_sub; ++i) {
        a = (Mat::Identity(model.dim, model.dim) + h * drift_jacobian(model, m)) * a;
        rk4_moment_step(model, m, p, h);
    }
    if (!m.allFinite() || !p.allFinite())
        throw DivergenceError("ekf prediction diverged");
    Prediction out;
    out.state.mean = std::move(m);
    out.state.cov = ensure_psd(p);
    out.cross = state.cov * a.transpose();
    return out;
}

/// First-order linearized Kalman update about the predicted mean.
inline GaussianState ekf_update(const GaussianState& predicted, const Vec& y,
                                const MeasurementModel& meas) {
    Vec y_hat = measurement_at(meas, predicted.mean);
    Mat h = measurement_jacobian(meas, predicted.mean);
    Mat innov_cov = h * predicted.cov * h.transpose() + meas.noise_cov;
    innov_cov = 0.5 * (innov_cov + innov_cov.transpose()).eval();
    Mat ls;
    try {
        ls = cholesky_sqrt(innov_cov);
    } catch (const NotPsdError& e) {
        throw SingularMatrixError(std::string("singular innovation covariance: ") + e.what());
    }
    Mat cross = predicted.cov * h.transpose();
    Mat k = ls.transpose()
                .triangularView<Eigen::Upper>()
                .solve(ls.triangularView<Eigen::Lower>().solve(cross.transpose()))
                .transpose();
    GaussianState out;
    out.mean = predicted.mean + k * (y - y_hat);
    out.cov = ensure_psd(predicted.cov - k * innov_cov * k.transpose());
    if (!out.mean.allFinite() || !out.cov.allFinite())
        throw EvaluationError("ekf update produced non-finite moments");
    return out;
}

/// Extended Kalman filter with RK4 moment integration (EKF-RK4 baseline).
inline FilterResult ekf_rk4_filter(const DiffusionModel& model, const MeasurementModel& meas,
                                   const ObservationSchedule& schedule,
                                   const std::vector<Vec>& data, const InitialLaw& init,
                                   int n_sub = kDefaultEkfSubsteps) {
    const int T = schedule.size();
    if (static_cast<int>(data.size()) != T)
        throw DimensionError("ekf_rk4_filter: data length does not match the schedule");
    FilterResult out;
    out.init = GaussianState{init.mean, init.cov};
    out.t0 = schedule.t0();
    out.times = schedule.times();
    GaussianState state = out.init;
    for (int k = 0; k < T; ++k) {
        try {
            Prediction pred = ekf_rk4_predict(model, state, schedule.dt(k), n_sub);
            state = ekf_update(pred.state, data[static_cast<std::size_t>(k)], meas);
            out.predicted.push_back(std::move(pred.state));
            out.cross.push_back(std::move(pred.cross));
            out.filtered.push_back(state);
        } catch (...) {
            detail::rethrow_with_step(k + 1, "ekf filter");
        }
    }
    return out;
}

/// RK4 extended smoother (EKS-RK4 baseline): recomputes the linearized
/// prediction moments from the filtered states, then runs the backward
/// recursion. Works on any filter result, so mixed pairings are possible.
inline SmootherResult eks_rk4_smoother(const DiffusionModel& model, const FilterResult& fr,
                                       int n_sub = kDefaultEkfSubsteps) {
    const int T = fr.steps();
    std::vector<GaussianState> predicted(static_cast<std::size_t>(T));
    std::vector<Mat> cross(static_cast<std::size_t>(T));
    for (int k = 0; k + 1 < T; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const double dt = fr.times[ku + 1] - fr.times[ku];
        try {
            Prediction p = ekf_rk4_predict(model, fr.filtered[ku], dt, n_sub);
            predicted[ku + 1] = std::move(p.state);
            cross[ku + 1] = std::move(p.cross);
        } catch (...) {
            detail::rethrow_with_step(k + 2, "eks prediction");
        }
    }
    return detail::smooth_core(fr.filtered, predicted, cross);
}

}  // namespace tme
