#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>

#include "tme/ekf.hpp"
#include "tme/parallel.hpp"
#include "tme/simulate.hpp"

namespace tme {

/// Constants of the mean-square stability bound: a per-step filter error
/// bound c_f(k), the filter covariance trace bound c_P, the transition-mean
/// Lipschitz bound c_g, the integration slack c_S, the covariance floor c_Q,
/// the prediction-residual bound c_bar, and the rule constant c_chi.
struct StabilityConstants {
    std::function<double(int)> c_f;
    double c_P = 0.0;
    double c_g = 0.0;
    double c_S = 0.0;
    double c_Q = 0.0;
    double c_bar = 0.0;
    double c_chi = 0.0;
};

struct GainConstant {
    double value = 0.0;
    bool contractive = false;  // whether 2 c_G < 1
};

/// c_G = c_P^2 c_chi (c_g + c_S) / c_Q^2, plus the applicability flag.
inline GainConstant gain_constant(const StabilityConstants& c) {
    if (!(c.c_P > 0.0) || !(c.c_chi > 0.0) || !(c.c_Q > 0.0))
        throw ConfigError("gain_constant: c_P, c_chi, c_Q must be positive");
    if (c.c_g < 0.0 || c.c_S < 0.0)
        throw ConfigError("gain_constant: c_g and c_S must be nonnegative");
    GainConstant out;
    out.value = c.c_P * c.c_P * c.c_chi * (c.c_g + c.c_S) / (c.c_Q * c.c_Q);
    out.contractive = 2.0 * out.value < 1.0;
    return out;
}

/// Mean-square smoothing error bound at step k of a T-step problem:
///   k = T:     c_f(T)
///   k = T-1:   2 (c_f(T-1) + c_G c_bar)
///   k <= T-2:  2 c_f(k) + (4 c_G / (1 - 2 c_G) + (2 c_G)^{T-k}) c_bar,
/// the last case requiring 2 c_G < 1.
inline double theoretical_bound(const StabilityConstants& c, int T, int k) {
    if (T < 1 || k < 1 || k > T) throw ConfigError("theoretical_bound requires 1 <= k <= T");
    if (!c.c_f) throw ConfigError("theoretical_bound requires c_f");
    if (c.c_bar < 0.0) throw ConfigError("theoretical_bound: c_bar must be nonnegative");
    const GainConstant g = gain_constant(c);
    if (k == T) return c.c_f(T);
    if (k == T - 1) return 2.0 * (c.c_f(T - 1) + g.value * c.c_bar);
    if (!g.contractive)
        throw ConditionViolatedError(
            "theoretical_bound: 2 c_G >= 1, the bound for k <= T-2 does not apply");
    const double two_cg = 2.0 * g.value;
    return 2.0 * c.c_f(k) +
           (4.0 * g.value / (1.0 - two_cg) + std::pow(two_cg, T - k)) * c.c_bar;
}

/// Axis-aligned sampling region with a deterministic seed.
struct SampleBox {
    Vec lo;
    Vec hi;
    int count = 1000;
    std::uint64_t seed = 0;
};

/// Sampled estimates of the assumption constants. These are extrema over a
/// finite sample, so c_Q_min is an upper bound on the true infimum and
/// c_g_max a lower bound on the true supremum; they are estimates, not
/// certified constants.
struct EmpiricalConstants {
    double c_Q_min = 0.0;
    double c_g_max = 0.0;
    double c_chi = 0.0;
    int samples = 0;
};

inline EmpiricalConstants empirical_constants(const DiffusionModel& model, const SigmaRule& rule,
                                              const TmeOrder& order, double dt,
                                              const SampleBox& box) {
    if (!(dt > 0.0)) throw ConfigError("empirical_constants requires dt > 0");
    if (box.lo.size() != model.dim || box.hi.size() != model.dim)
        throw DimensionError("empirical_constants: box bounds must have model dimension");
    if (box.count < 1) throw ConfigError("empirical_constants requires count >= 1");

    const int d = model.dim;
    const int m = order.value();
    auto iterates = build_generator_iterates(model, m);
    // gradient of g^M needs one level on top of the 2M-deep iterate
    EvalContext ctx{std::min(kMaxTowerLevel, 2 * m + 1)};

    SeededStream rng(box.seed, 0);
    EmpiricalConstants out;
    out.c_chi = rule.chi_constant();
    out.samples = box.count;
    out.c_Q_min = std::numeric_limits<double>::infinity();
    out.c_g_max = 0.0;

    Vec x(d);
    Mat jac(d, d);
    const auto joint_width = static_cast<std::size_t>(d + packed_size(d));
    ArgBuf<Dual<double>> lifted(static_cast<std::size_t>(d));
    boost::container::small_vector<Dual<double>, 24> iter_out(joint_width);
    for (int n = 0; n < box.count; ++n) {
        for (int i = 0; i < d; ++i) x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * rng.uniform();

        auto values = eval_iterates(iterates, x, ctx);
        Mat q = detail::cov_raw_from_values(values, diffusion_matrix(model, x), m, dt);
        Eigen::SelfAdjointEigenSolver<Mat> es(q);
        out.c_Q_min = std::min(out.c_Q_min, es.eigenvalues().minCoeff());

        // Jacobian of g^M column by column from dual-lifted iterate sweeps
        for (int dir = 0; dir < d; ++dir) {
            for (int p = 0; p < d; ++p)
                lifted[static_cast<std::size_t>(p)] = Dual<double>{x[p], p == dir ? 1.0 : 0.0};
            auto lspan = std::span<const Dual<double>>(lifted.data(), lifted.size());
            Vec col = Vec::Zero(d);
            double coeff = 1.0;
            for (int r = 0; r <= m; ++r) {
                if (r > 0) coeff *= dt / r;
                iterates.joint[static_cast<std::size_t>(r)](
                    lspan, std::span<Dual<double>>(iter_out.data(), iter_out.size()), ctx);
                for (int i = 0; i < d; ++i)
                    col[i] += coeff * iter_out[static_cast<std::size_t>(i)].d;
            }
            jac.col(dir) = col;
        }
        Eigen::JacobiSVD<Mat> svd(jac);
        const double spectral = svd.singularValues()(0);
        out.c_g_max = std::max(out.c_g_max, spectral * spectral);
    }
    return out;
}

/// Per-step Monte Carlo estimate of the squared smoothing error.
struct ErrorCurvePoint {
    int k = 0;       // 1-based measurement index
    double mean = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

/// Simulation plus estimation pipeline for the Monte Carlo error study.
struct McStudyConfig {
    SimConfig sim;  // run_index is overwritten per run
    std::shared_ptr<const MomentScheme> scheme;
    SigmaRule rule;
    int threads = 1;
};

/// Runs n_runs independent simulate -> filter -> smooth pipelines and
/// returns the per-step sample mean of ||X_k - m^s_k||^2 with a 0.95
/// normal-approximation confidence interval. Any failing run aborts the
/// study with its run index and seed attached.
inline std::vector<ErrorCurvePoint> mc_error_estimate(const McStudyConfig& cfg, int n_runs) {
    if (n_runs < 2) throw ConfigError("mc_error_estimate requires n_runs >= 2");
    const int T = cfg.sim.schedule.size();
    std::vector<std::vector<double>> sq_errors(static_cast<std::size_t>(n_runs));

    auto run_one = [&](int r) {
        SimConfig sim = cfg.sim;
        sim.run_index = static_cast<std::uint64_t>(r);
        SimRecord rec = simulate_experiment(sim);
        FilterResult fr = run_filter(*cfg.scheme, cfg.rule, cfg.sim.meas, cfg.sim.schedule,
                                     rec.data, cfg.sim.init);
        SmootherResult sr = smooth(fr);
        auto& sq = sq_errors[static_cast<std::size_t>(r)];
        sq.resize(static_cast<std::size_t>(T));
        for (int k = 0; k < T; ++k)
            sq[static_cast<std::size_t>(k)] =
                (rec.truth.states[static_cast<std::size_t>(k)] -
                 sr.smoothed[static_cast<std::size_t>(k)].mean)
                    .squaredNorm();
    };
    auto errors = parallel_runs(n_runs, cfg.threads, run_one);
    for (int r = 0; r < n_runs; ++r) {
        if (!errors[static_cast<std::size_t>(r)]) continue;
        try {
            std::rethrow_exception(errors[static_cast<std::size_t>(r)]);
        } catch (const std::exception& e) {
            throw Error("monte carlo run " + std::to_string(r) + " (seed " +
                        std::to_string(cfg.sim.seed) + ", streams " + std::to_string(2 * r) +
                        "/" + std::to_string(2 * r + 1) + ") failed: " + e.what());
        }
    }

    constexpr double z95 = 1.959963984540054;
    std::vector<ErrorCurvePoint> curve(static_cast<std::size_t>(T));
    for (int k = 0; k < T; ++k) {
        double sum = 0.0;
        for (int r = 0; r < n_runs; ++r)
            sum += sq_errors[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
        const double mean = sum / n_runs;
        double ss = 0.0;
        for (int r = 0; r < n_runs; ++r) {
            const double dev =
                sq_errors[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] - mean;
            ss += dev * dev;
        }
        const double sd = std::sqrt(ss / (n_runs - 1));
        const double half = z95 * sd / std::sqrt(static_cast<double>(n_runs));
        curve[static_cast<std::size_t>(k)] = {k + 1, mean, mean - half, mean + half};
    }
    return curve;
}

}  // namespace tme
