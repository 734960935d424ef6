#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tme/field.hpp"

namespace tme {

/// Ito diffusion dX = a(X) dt + b(X) dW with state dimension `dim` and
/// Wiener dimension `wiener_dim`. Drift and dispersion entries are scalar
/// fields so the generator can differentiate them exactly.
struct DiffusionModel {
    int dim = 0;
    int wiener_dim = 0;
    std::vector<ScalarField> drift;                    // d entries
    std::vector<std::vector<ScalarField>> dispersion;  // d x s entries
    std::string name;
};

inline DiffusionModel make_diffusion_model(int dim, int wiener_dim,
                                           std::vector<ScalarField> drift,
                                           std::vector<std::vector<ScalarField>> dispersion,
                                           std::string name = {}) {
    if (dim < 1 || wiener_dim < 1) throw DimensionError("model dimensions must be positive");
    if (static_cast<int>(drift.size()) != dim)
        throw DimensionError("drift must have exactly d components");
    if (static_cast<int>(dispersion.size()) != dim)
        throw DimensionError("dispersion must have d rows");
    for (const auto& row : dispersion)
        if (static_cast<int>(row.size()) != wiener_dim)
            throw DimensionError("dispersion must have s columns");
    for (const auto& f : drift)
        if (f.dim() != dim) throw DimensionError("drift component dimension mismatch");
    return DiffusionModel{dim, wiener_dim, std::move(drift), std::move(dispersion),
                          std::move(name)};
}

inline Vec drift_at(const DiffusionModel& m, const Vec& x) {
    Vec a(m.dim);
    for (int i = 0; i < m.dim; ++i) a[i] = m.drift[static_cast<std::size_t>(i)](x);
    return a;
}

inline Mat dispersion_at(const DiffusionModel& m, const Vec& x) {
    Mat b(m.dim, m.wiener_dim);
    for (int i = 0; i < m.dim; ++i)
        for (int k = 0; k < m.wiener_dim; ++k)
            b(i, k) = m.dispersion[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)](x);
    return b;
}

/// b(x) b(x)^T, exactly symmetric by construction.
inline Mat diffusion_matrix(const DiffusionModel& m, const Vec& x) {
    Mat b = dispersion_at(m, x);
    Mat g(m.dim, m.dim);
    for (int i = 0; i < m.dim; ++i) {
        for (int j = i; j < m.dim; ++j) {
            double acc = 0.0;
            for (int k = 0; k < m.wiener_dim; ++k) acc += b(i, k) * b(j, k);
            g(i, j) = acc;
            g(j, i) = acc;
        }
    }
    return g;
}

// --- shipped models ----------------------------------------------------------

/// Lorenz '63 drift (kappa(x2-x1), x1(lambda-x3)-x2, x1 x2 - mu x3) with
/// constant dispersion sigma * I_3.
inline DiffusionModel make_lorenz63(double kappa, double lambda, double mu, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("lorenz63: sigma must be positive");
    std::vector<ScalarField> drift;
    drift.push_back(make_field(3, [kappa]<class S>(std::span<const S> x) -> S {
        return kappa * (x[1] - x[0]);
    }));
    drift.push_back(make_field(3, [lambda]<class S>(std::span<const S> x) -> S {
        return x[0] * (lambda - x[2]) - x[1];
    }));
    drift.push_back(make_field(3, [mu]<class S>(std::span<const S> x) -> S {
        return x[0] * x[1] - mu * x[2];
    }));
    std::vector<std::vector<ScalarField>> disp(3);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            disp[static_cast<std::size_t>(i)].push_back(
                constant_field(3, i == k ? sigma : 0.0));
    return make_diffusion_model(3, 3, std::move(drift), std::move(disp), "lorenz63");
}

/// Ornstein-Uhlenbeck dX = -theta X dt + sigma dW; analytically solvable.
inline DiffusionModel make_ou(double theta, double sigma) {
    if (!(theta > 0.0) || !(sigma > 0.0))
        throw ConfigError("ou: theta and sigma must be positive");
    std::vector<ScalarField> drift;
    drift.push_back(make_field(1, [theta]<class S>(std::span<const S> x) -> S {
        return (-theta) * x[0];
    }));
    std::vector<std::vector<ScalarField>> disp{{constant_field(1, sigma)}};
    return make_diffusion_model(1, 1, std::move(drift), std::move(disp), "ou");
}

/// Benes model: drift tanh(x), unit dispersion.
inline DiffusionModel make_benes() {
    std::vector<ScalarField> drift;
    drift.push_back(make_field(1, []<class S>(std::span<const S> x) -> S {
        using std::tanh;
        return tanh(x[0]);
    }));
    std::vector<std::vector<ScalarField>> disp{{constant_field(1, 1.0)}};
    return make_diffusion_model(1, 1, std::move(drift), std::move(disp), "benes");
}

/// Coefficients of a linear SDE dX = F X dt + L dW, kept alongside the
/// generic model so exact discretization is available.
struct LinearSde {
    Mat F;
    Mat L;
};

inline DiffusionModel make_linear(const Mat& F, const Mat& L) {
    const int d = static_cast<int>(F.rows());
    const int s = static_cast<int>(L.cols());
    if (F.cols() != d) throw DimensionError("linear model: F must be square");
    if (L.rows() != d) throw DimensionError("linear model: L must have d rows");
    std::vector<ScalarField> drift;
    for (int i = 0; i < d; ++i) {
        std::vector<double> row(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = F(i, j);
        drift.push_back(make_field(d, [row]<class S>(std::span<const S> x) -> S {
            S acc(0.0);
            for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * x[j];
            return acc;
        }));
    }
    std::vector<std::vector<ScalarField>> disp(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < s; ++k)
            disp[static_cast<std::size_t>(i)].push_back(constant_field(d, L(i, k)));
    return make_diffusion_model(d, s, std::move(drift), std::move(disp), "linear");
}

// --- measurement, initial law, schedule ---------------------------------------

namespace detail {
inline void check_symmetric_psd(const Mat& c, const char* what, bool strictly_positive) {
    if (c.rows() != c.cols()) throw DimensionError(std::string(what) + ": must be square");
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw NotPsdError(std::string(what) + ": matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(c);
    const double min_eig = es.eigenvalues().minCoeff();
    if (strictly_positive ? !(min_eig > 0.0) : min_eig < -1e-12 * scale)
        throw NotPsdError(std::string(what) + ": matrix is not positive semidefinite");
}
}  // namespace detail

/// Measurement model Y_k = h(X_k) + xi_k with xi_k ~ N(0, noise_cov).
/// noise_cov must be symmetric positive semidefinite; strictly positive
/// definite is recommended for filtering.
struct MeasurementModel {
    int state_dim = 0;
    int meas_dim = 0;
    std::vector<ScalarField> h;  // d_y entries, each over R^d
    Mat noise_cov;
};

inline MeasurementModel make_measurement_model(int state_dim, std::vector<ScalarField> h,
                                               Mat noise_cov) {
    const int dy = static_cast<int>(h.size());
    if (dy < 1) throw DimensionError("measurement model needs at least one component");
    for (const auto& f : h)
        if (f.dim() != state_dim) throw DimensionError("measurement component dim mismatch");
    if (noise_cov.rows() != dy) throw DimensionError("noise_cov must be d_y x d_y");
    detail::check_symmetric_psd(noise_cov, "measurement noise covariance", false);
    return MeasurementModel{state_dim, dy, std::move(h), std::move(noise_cov)};
}

/// Observe one state coordinate with additive Gaussian noise of variance
/// `noise_var` (the Lorenz benchmark observes coordinate 0 with variance 2).
inline MeasurementModel measure_coordinate(int state_dim, int coord, double noise_var) {
    std::vector<ScalarField> h;
    h.push_back(coordinate_field(state_dim, coord));
    Mat xi(1, 1);
    xi(0, 0) = noise_var;
    return make_measurement_model(state_dim, std::move(h), std::move(xi));
}

inline MeasurementModel make_linear_measurement(const Mat& H, const Mat& noise_cov) {
    const int d = static_cast<int>(H.cols());
    std::vector<ScalarField> h;
    for (int i = 0; i < H.rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = H(i, j);
        h.push_back(make_field(d, [row]<class S>(std::span<const S> x) -> S {
            S acc(0.0);
            for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * x[j];
            return acc;
        }));
    }
    return make_measurement_model(d, std::move(h), noise_cov);
}

inline Vec measurement_at(const MeasurementModel& m, const Vec& x) {
    Vec y(m.meas_dim);
    for (int i = 0; i < m.meas_dim; ++i) y[i] = m.h[static_cast<std::size_t>(i)](x);
    return y;
}

/// X(t_0) ~ N(mean, cov).
struct InitialLaw {
    Vec mean;
    Mat cov;
};

inline InitialLaw make_initial_law(Vec mean, Mat cov) {
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
        throw DimensionError("initial law: cov must be d x d");
    detail::check_symmetric_psd(cov, "initial covariance", false);
    return InitialLaw{std::move(mean), std::move(cov)};
}

/// Measurement instants t_1 < t_2 < ... < t_T, all after the start time t0.
/// Coincident instants are rejected: the transition covariance degenerates
/// at zero step size.
class ObservationSchedule {
    double t0_ = 0.0;
    std::vector<double> times_;

public:
    ObservationSchedule() = default;
    ObservationSchedule(double t0, std::vector<double> times) : t0_(t0), times_(std::move(times)) {
        double prev = t0_;
        for (double t : times_) {
            if (!(t > prev))
                throw ScheduleError("observation times must be strictly increasing and after t0");
            prev = t;
        }
    }

    double t0() const { return t0_; }
    int size() const { return static_cast<int>(times_.size()); }
    const std::vector<double>& times() const { return times_; }
    double time(int k) const { return times_[static_cast<std::size_t>(k)]; }
    /// Step length ending at measurement k (0-based).
    double dt(int k) const {
        return k == 0 ? times_[0] - t0_
                      : times_[static_cast<std::size_t>(k)] - times_[static_cast<std::size_t>(k) - 1];
    }
};

inline ObservationSchedule uniform_schedule(double t0, double dt, int count) {
    if (!(dt > 0.0)) throw ScheduleError("uniform schedule requires dt > 0");
    std::vector<double> times(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) times[static_cast<std::size_t>(k)] = t0 + (k + 1) * dt;
    return ObservationSchedule(t0, std::move(times));
}

}  // namespace tme
