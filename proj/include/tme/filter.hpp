#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tme/quadrature.hpp"
#include "tme/schemes.hpp"

namespace tme {

/// Gaussian belief N(mean, cov).
struct GaussianState {
    Vec mean;
    Mat cov;
};

/// One-step prediction: the predicted state and the cross-covariance
/// D = Cov(X_k, X_{k+1} | y_{1:k}) that the smoothing gain is built from.
struct Prediction {
    GaussianState state;
    Mat cross;
};

namespace detail {

[[noreturn]] inline void rethrow_with_step(int k, const char* stage) {
    const std::string prefix = std::string(stage) + " failed at step " + std::to_string(k) + ": ";
    try {
        throw;
    } catch (const NotPsdError& e) {
        throw NotPsdError(prefix + e.what());
    } catch (const SingularMatrixError& e) {
        throw SingularMatrixError(prefix + e.what());
    } catch (const DepthExceededError& e) {
        throw DepthExceededError(prefix + e.what());
    } catch (const DivergenceError& e) {
        throw DivergenceError(prefix + e.what());
    } catch (const Error& e) {
        throw Error(prefix + e.what());
    }
}

}  // namespace detail

/// Sigma-point prediction through the moment scheme. All three integrals
/// (mean, second moment, cross moment) share one set of sigma points.
inline Prediction predict(const MomentScheme& scheme, const SigmaRule& rule,
                          const GaussianState& state, double dt) {
    if (!(dt > 0.0)) throw ConfigError("predict requires dt > 0");
    const int d = scheme.dim();
    if (state.mean.size() != d || rule.dim != d)
        throw DimensionError("predict: state/rule dimension mismatch");

    Mat sqrt_p = cholesky_sqrt(state.cov);
    Vec mean_pred = Vec::Zero(d);
    Mat second = Mat::Zero(d, d);
    Mat cross_raw = Mat::Zero(d, d);
    Vec chi(d), g(d);
    Mat q(d, d);
    for (int i = 0; i < rule.count(); ++i) {
        chi = state.mean + sqrt_p * rule.nodes.col(i);
        scheme.moments(chi, dt, g, q);
        const double w = rule.weights[i];
        mean_pred += w * g;
        second += w * (q + g * g.transpose());
        cross_raw += w * (chi * g.transpose());
    }
    Prediction out;
    out.state.mean = mean_pred;
    out.state.cov = ensure_psd(second - mean_pred * mean_pred.transpose());
    out.cross = cross_raw - state.mean * mean_pred.transpose();
    if (!out.state.mean.allFinite() || !out.state.cov.allFinite())
        throw EvaluationError("prediction produced non-finite moments");
    return out;
}

/// Statistical-linearization measurement update with the same sigma-point
/// rule used for prediction.
inline GaussianState update(const GaussianState& predicted, const Vec& y,
                            const MeasurementModel& meas, const SigmaRule& rule) {
    const int d = static_cast<int>(predicted.mean.size());
    const int dy = meas.meas_dim;
    if (y.size() != dy) throw DimensionError("update: measurement dimension mismatch");
    if (meas.state_dim != d || rule.dim != d)
        throw DimensionError("update: state dimension mismatch");

    Mat sqrt_p = cholesky_sqrt(predicted.cov);
    Vec y_hat = Vec::Zero(dy);
    Mat yy = Mat::Zero(dy, dy);
    Mat xy = Mat::Zero(d, dy);
    Vec chi(d), h(dy);
    for (int i = 0; i < rule.count(); ++i) {
        chi = predicted.mean + sqrt_p * rule.nodes.col(i);
        h = measurement_at(meas, chi);
        const double w = rule.weights[i];
        y_hat += w * h;
        yy += w * (h * h.transpose());
        xy += w * (chi * h.transpose());
    }
    Mat innov_cov = yy - y_hat * y_hat.transpose() + meas.noise_cov;
    innov_cov = 0.5 * (innov_cov + innov_cov.transpose()).eval();
    Mat cross = xy - predicted.mean * y_hat.transpose();

    Mat ls;
    try {
        ls = cholesky_sqrt(innov_cov);
    } catch (const NotPsdError& e) {
        throw SingularMatrixError(std::string("singular innovation covariance: ") + e.what());
    }
    // K = cross * innov_cov^{-1} via two triangular solves
    Mat k = ls.transpose()
                .triangularView<Eigen::Upper>()
                .solve(ls.triangularView<Eigen::Lower>().solve(cross.transpose()))
                .transpose();

    GaussianState out;
    out.mean = predicted.mean + k * (y - y_hat);
    out.cov = ensure_psd(predicted.cov - k * innov_cov * k.transpose());
    if (!out.mean.allFinite() || !out.cov.allFinite())
        throw EvaluationError("update produced non-finite moments");
    return out;
}

/// Forward pass output. predicted[k] / cross[k] belong to the transition
/// into measurement k, so the smoother can be run directly from the stored
/// quantities.
struct FilterResult {
    GaussianState init;
    double t0 = 0.0;
    std::vector<double> times;
    std::vector<GaussianState> predicted;
    std::vector<GaussianState> filtered;
    std::vector<Mat> cross;

    int steps() const { return static_cast<int>(filtered.size()); }
};

inline FilterResult run_filter(const MomentScheme& scheme, const SigmaRule& rule,
                               const MeasurementModel& meas, const ObservationSchedule& schedule,
                               const std::vector<Vec>& data, const InitialLaw& init) {
    const int T = schedule.size();
    if (static_cast<int>(data.size()) != T)
        throw DimensionError("run_filter: data length does not match the schedule");

    FilterResult out;
    out.init = GaussianState{init.mean, init.cov};
    out.t0 = schedule.t0();
    out.times = schedule.times();
    out.predicted.reserve(static_cast<std::size_t>(T));
    out.filtered.reserve(static_cast<std::size_t>(T));
    out.cross.reserve(static_cast<std::size_t>(T));

    GaussianState state = out.init;
    for (int k = 0; k < T; ++k) {
        try {
            Prediction pred = predict(scheme, rule, state, schedule.dt(k));
            state = update(pred.state, data[static_cast<std::size_t>(k)], meas, rule);
            out.predicted.push_back(std::move(pred.state));
            out.cross.push_back(std::move(pred.cross));
            out.filtered.push_back(state);
        } catch (...) {
            detail::rethrow_with_step(k + 1, "filter");
        }
    }
    return out;
}

}  // namespace tme
