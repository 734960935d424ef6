#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "tme/model.hpp"
#include "tme/quadrature.hpp"
#include "tme/rng.hpp"

namespace tme {

/// A sampled path: states[i] at times[i].
struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
};

/// Euler-Maruyama path x_{j+1} = x_j + a(x_j) h + b(x_j) sqrt(h) zeta_j over
/// [t0, t_end] with n_steps uniform steps; returns all grid points. The final
/// grid time is set to t_end exactly so downstream time lookups can match it.
inline Trajectory euler_maruyama_path(const DiffusionModel& model, const Vec& x0, double t0,
                                      double t_end, int n_steps, SeededStream& rng) {
    if (n_steps < 1) throw ConfigError("euler_maruyama_path requires n_steps >= 1");
    if (!(t_end > t0)) throw ConfigError("euler_maruyama_path requires t_end > t0");
    if (x0.size() != model.dim) throw DimensionError("euler_maruyama_path: x0 dimension");

    const double h = (t_end - t0) / n_steps;
    const double sqrt_h = std::sqrt(h);
    Trajectory traj;
    traj.times.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.times.push_back(t0);
    traj.states.push_back(x0);

    Vec x = x0;
    Vec noise(model.wiener_dim);
    for (int j = 0; j < n_steps; ++j) {
        for (int k = 0; k < model.wiener_dim; ++k) noise[k] = rng.normal();
        x += drift_at(model, x) * h + dispersion_at(model, x) * (sqrt_h * noise);
        if (!x.allFinite())
            throw DivergenceError("euler_maruyama_path diverged at step " + std::to_string(j + 1));
        traj.times.push_back(j + 1 == n_steps ? t_end : t0 + (j + 1) * h);
        traj.states.push_back(x);
    }
    return traj;
}

/// y_k = h(X(t_k)) + chol(Xi) zeta_k. Every schedule time must match a
/// trajectory grid time exactly.
inline std::vector<Vec> sample_measurements(const Trajectory& traj,
                                            const ObservationSchedule& schedule,
                                            const MeasurementModel& meas, SeededStream& rng) {
    Mat noise_sqrt = cholesky_sqrt(meas.noise_cov);
    std::vector<Vec> data;
    data.reserve(static_cast<std::size_t>(schedule.size()));
    Vec zeta(meas.meas_dim);
    for (int k = 0; k < schedule.size(); ++k) {
        const double t = schedule.time(k);
        auto iter = std::lower_bound(traj.times.begin(), traj.times.end(), t);
        if (iter == traj.times.end() || *iter != t)
            throw ScheduleError("measurement time " + std::to_string(t) +
                                " is not on the trajectory grid");
        const auto idx = static_cast<std::size_t>(iter - traj.times.begin());
        for (int i = 0; i < meas.meas_dim; ++i) zeta[i] = rng.normal();
        data.push_back(measurement_at(meas, traj.states[idx]) + noise_sqrt * zeta);
    }
    return data;
}

inline constexpr int kDefaultTruthSubsteps = 1000;

/// One simulated experiment record: the ground truth subsampled at the
/// measurement times, and the measurements themselves.
struct SimRecord {
    Vec x0;
    Trajectory truth;  // at measurement times
    std::vector<Vec> data;
};

struct SimConfig {
    DiffusionModel model;
    MeasurementModel meas;
    InitialLaw init;
    ObservationSchedule schedule;
    int n_sub = kDefaultTruthSubsteps;
    std::uint64_t seed = 0;
    std::uint64_t run_index = 0;
};

/// Draws X_0 from the initial law, integrates a fine Euler-Maruyama path
/// with n_sub substeps per measurement interval, and samples measurements.
/// Stream 2*run_index drives the path, stream 2*run_index + 1 the
/// measurement noise, so records are reproducible under any parallel order.
inline SimRecord simulate_experiment(const SimConfig& cfg) {
    SeededStream path_rng(cfg.seed, 2 * cfg.run_index);
    SeededStream meas_rng(cfg.seed, 2 * cfg.run_index + 1);

    Mat init_sqrt = cholesky_sqrt(cfg.init.cov);
    Vec zeta(cfg.model.dim);
    for (int i = 0; i < cfg.model.dim; ++i) zeta[i] = path_rng.normal();
    SimRecord rec;
    rec.x0 = cfg.init.mean + init_sqrt * zeta;

    rec.truth.times.reserve(static_cast<std::size_t>(cfg.schedule.size()));
    rec.truth.states.reserve(static_cast<std::size_t>(cfg.schedule.size()));
    Vec x = rec.x0;
    double t_prev = cfg.schedule.t0();
    for (int k = 0; k < cfg.schedule.size(); ++k) {
        const double t_k = cfg.schedule.time(k);
        Trajectory seg = euler_maruyama_path(cfg.model, x, t_prev, t_k, cfg.n_sub, path_rng);
        x = seg.states.back();
        rec.truth.times.push_back(t_k);
        rec.truth.states.push_back(x);
        t_prev = t_k;
    }

    Mat noise_sqrt = cholesky_sqrt(cfg.meas.noise_cov);
    Vec mz(cfg.meas.meas_dim);
    rec.data.reserve(static_cast<std::size_t>(cfg.schedule.size()));
    for (int k = 0; k < cfg.schedule.size(); ++k) {
        for (int i = 0; i < cfg.meas.meas_dim; ++i) mz[i] = meas_rng.normal();
        rec.data.push_back(measurement_at(cfg.meas, rec.truth.states[static_cast<std::size_t>(k)]) +
                           noise_sqrt * mz);
    }
    return rec;
}

}  // namespace tme
