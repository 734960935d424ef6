#pragma once

#include "tme/filter.hpp"

namespace tme {

/// Backward-pass output; smoothed[k] pairs with measurement k.
struct SmootherResult {
    std::vector<GaussianState> smoothed;
    std::vector<Mat> gains;  // G_k for k = 0..T-2
};

namespace detail {

/// Rauch-Tung-Striebel-type backward recursion from filtered states and the
/// per-step predicted moments and cross-covariances. The recursion starts
/// from the final filtered state, copied exactly.
inline SmootherResult smooth_core(const std::vector<GaussianState>& filtered,
                                  const std::vector<GaussianState>& predicted,
                                  const std::vector<Mat>& cross) {
    const int T = static_cast<int>(filtered.size());
    SmootherResult out;
    out.smoothed.resize(static_cast<std::size_t>(T));
    if (T == 0) return out;
    out.gains.resize(static_cast<std::size_t>(T - 1));
    out.smoothed[static_cast<std::size_t>(T - 1)] = filtered[static_cast<std::size_t>(T - 1)];

    for (int k = T - 2; k >= 0; --k) {
        const auto ku = static_cast<std::size_t>(k);
        const GaussianState& pred_next = predicted[ku + 1];
        const Mat& d_next = cross[ku + 1];
        Mat sqrt_pp;
        try {
            sqrt_pp = cholesky_sqrt(pred_next.cov);
        } catch (const NotPsdError& e) {
            throw SingularMatrixError("singular prediction covariance while smoothing step " +
                                      std::to_string(k + 1) + ": " + e.what());
        }
        // G = D (P^-)^{-1} via two triangular solves against the factor
        Mat g = sqrt_pp.transpose()
                    .triangularView<Eigen::Upper>()
                    .solve(sqrt_pp.triangularView<Eigen::Lower>().solve(d_next.transpose()))
                    .transpose();
        const GaussianState& next = out.smoothed[ku + 1];
        out.smoothed[ku].mean =
            filtered[ku].mean + g * (next.mean - pred_next.mean);
        out.smoothed[ku].cov = ensure_psd(
            filtered[ku].cov + g * (next.cov - pred_next.cov) * g.transpose());
        out.gains[ku] = std::move(g);
    }
    return out;
}

}  // namespace detail

/// Smooths with the prediction moments stored by the filter pass (the
/// filter's own moment scheme).
inline SmootherResult smooth(const FilterResult& fr) {
    return detail::smooth_core(fr.filtered, fr.predicted, fr.cross);
}

/// Smooths a filter result with a (possibly different) moment scheme: the
/// predicted moments and cross-covariances are recomputed from the filtered
/// states with `scheme`, then the backward recursion runs as usual.
inline SmootherResult smooth_with(const MomentScheme& scheme, const SigmaRule& rule,
                                  const FilterResult& fr) {
    const int T = fr.steps();
    std::vector<GaussianState> predicted(static_cast<std::size_t>(T));
    std::vector<Mat> cross(static_cast<std::size_t>(T));
    for (int k = 0; k + 1 < T; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const double dt = fr.times[ku + 1] - fr.times[ku];
        try {
            Prediction p = predict(scheme, rule, fr.filtered[ku], dt);
            predicted[ku + 1] = std::move(p.state);
            cross[ku + 1] = std::move(p.cross);
        } catch (...) {
            detail::rethrow_with_step(k + 2, "smoother prediction");
        }
    }
    return detail::smooth_core(fr.filtered, predicted, cross);
}

}  // namespace tme
