#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "tme/errors.hpp"
#include "tme/field.hpp"

namespace tme {

/// Unit sigma-point rule: nodes beta_i (columns) and nonnegative weights w_i
/// normalized against N(0, I). Translated and scaled by integrate() via
/// chi_i = m + sqrt(P) beta_i.
struct SigmaRule {
    int dim = 0;
    Mat nodes;    // d x K
    Vec weights;  // K
    std::string name;

    int count() const { return static_cast<int>(weights.size()); }

    /// c_chi with sqrt(c_chi) = sum_i w_i ||beta_i||.
    double chi_constant() const {
        double s = 0.0;
        for (int i = 0; i < count(); ++i) s += weights[i] * nodes.col(i).norm();
        return s * s;
    }
};

namespace detail {

inline void validate_rule(const SigmaRule& rule, bool check_second_moment = true) {
    const int d = rule.dim;
    if (rule.nodes.rows() != d || rule.nodes.cols() != rule.weights.size())
        throw DimensionError("sigma rule: node/weight shape mismatch");
    if ((rule.weights.array() < 0.0).any())
        throw ConfigError("sigma rule: weights must be nonnegative");
    if (std::abs(rule.weights.sum() - 1.0) > 1e-12)
        throw ConfigError("sigma rule: weights must sum to one");
    Vec first = rule.nodes * rule.weights;
    if (first.cwiseAbs().maxCoeff() > 1e-12)
        throw ConfigError("sigma rule: first moment must vanish");
    if (!check_second_moment) return;
    Mat second = rule.nodes * rule.weights.asDiagonal() * rule.nodes.transpose();
    if ((second - Mat::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-10)
        throw ConfigError("sigma rule: second moment must be the identity");
}

/// Nodes and weights of the p-point probabilists' Gauss-Hermite rule via the
/// symmetric tridiagonal Jacobi matrix (Golub-Welsch).
inline void gauss_hermite_1d(int p, Vec& nodes, Vec& weights) {
    Mat jacobi = Mat::Zero(p, p);
    for (int i = 1; i < p; ++i) {
        const double off = std::sqrt(static_cast<double>(i));
        jacobi(i - 1, i) = off;
        jacobi(i, i - 1) = off;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(jacobi);
    nodes = es.eigenvalues();  // ascending
    weights.resize(p);
    for (int i = 0; i < p; ++i) {
        const double v0 = es.eigenvectors()(0, i);
        weights[i] = v0 * v0;
    }
}

}  // namespace detail

/// Tensor-product Gauss-Hermite rule with p nodes per coordinate (K = p^d),
/// exact for per-coordinate polynomial degree <= 2p-1 under N(0, I). Node
/// ordering is lexicographic in the coordinate index tuple.
inline SigmaRule gauss_hermite_rule(int d, int p, long node_budget = 1000000) {
    if (d < 1 || p < 1) throw ConfigError("gauss_hermite_rule requires d >= 1 and p >= 1");
    double k_check = std::pow(static_cast<double>(p), d);
    if (k_check > static_cast<double>(node_budget))
        throw ConfigError("gauss_hermite_rule: p^d exceeds the node budget");
    Vec n1, w1;
    detail::gauss_hermite_1d(p, n1, w1);

    const long K = static_cast<long>(k_check + 0.5);
    SigmaRule rule;
    rule.dim = d;
    rule.nodes.resize(d, K);
    rule.weights.resize(K);
    rule.name = "gh:" + std::to_string(p);
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (long flat = 0; flat < K; ++flat) {
        double w = 1.0;
        for (int c = 0; c < d; ++c) {
            rule.nodes(c, flat) = n1[idx[static_cast<std::size_t>(c)]];
            w *= w1[idx[static_cast<std::size_t>(c)]];
        }
        rule.weights[flat] = w;
        for (int c = d - 1; c >= 0; --c) {  // last coordinate fastest
            if (++idx[static_cast<std::size_t>(c)] < p) break;
            idx[static_cast<std::size_t>(c)] = 0;
        }
    }
    // p = 1 is the single-node mean rule; it cannot match second moments
    detail::validate_rule(rule, /*check_second_moment=*/p >= 2);
    return rule;
}

/// Spherical cubature rule: 2d nodes +-sqrt(d) e_i with equal weights.
inline SigmaRule cubature_rule(int d) {
    if (d < 1) throw ConfigError("cubature_rule requires d >= 1");
    SigmaRule rule;
    rule.dim = d;
    rule.nodes = Mat::Zero(d, 2 * d);
    rule.weights = Vec::Constant(2 * d, 1.0 / (2.0 * d));
    rule.name = "cubature";
    const double radius = std::sqrt(static_cast<double>(d));
    for (int i = 0; i < d; ++i) {
        rule.nodes(i, 2 * i) = radius;
        rule.nodes(i, 2 * i + 1) = -radius;
    }
    detail::validate_rule(rule);
    return rule;
}

/// Standard unscented rule: center node plus +-sqrt(d + kappa) e_i. Negative
/// center weights are rejected, so kappa >= 0 is required.
inline SigmaRule unscented_rule(int d, double kappa) {
    if (d < 1) throw ConfigError("unscented_rule requires d >= 1");
    if (!(d + kappa > 0.0)) throw ConfigError("unscented_rule requires d + kappa > 0");
    if (kappa < 0.0)
        throw ConfigError("unscented_rule: negative center weight (kappa < 0) not supported");
    SigmaRule rule;
    rule.dim = d;
    rule.nodes = Mat::Zero(d, 2 * d + 1);
    rule.weights.resize(2 * d + 1);
    rule.name = "unscented:" + std::to_string(kappa);
    rule.weights[0] = kappa / (d + kappa);
    const double radius = std::sqrt(d + kappa);
    const double w = 1.0 / (2.0 * (d + kappa));
    for (int i = 0; i < d; ++i) {
        rule.nodes(i, 1 + 2 * i) = radius;
        rule.nodes(i, 2 + 2 * i) = -radius;
        rule.weights[1 + 2 * i] = w;
        rule.weights[2 + 2 * i] = w;
    }
    detail::validate_rule(rule);
    return rule;
}

/// Lower-triangular L with L L^T = P + jI, where the diagonal jitter j
/// escalates through {0, 1e-12, 1e-10, 1e-8} * trace(P)/d until the
/// factorization succeeds. Exactly singular PSD matrices factor at j = 0.
inline Mat cholesky_sqrt(const Mat& p) {
    const int d = static_cast<int>(p.rows());
    if (p.cols() != d) throw DimensionError("cholesky_sqrt: matrix must be square");
    const double unit = p.trace() / d;
    const double jitters[] = {0.0, 1e-12 * unit, 1e-10 * unit, 1e-8 * unit};
    Mat a = 0.5 * (p + p.transpose());
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());

    Mat l(d, d);
    for (double jitter : jitters) {
        l.setZero();
        bool ok = true;
        for (int j = 0; j < d && ok; ++j) {
            double diag = a(j, j) + jitter;
            for (int k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
            if (diag > 0.0) {
                l(j, j) = std::sqrt(diag);
                for (int i = j + 1; i < d; ++i) {
                    double r = a(i, j);
                    for (int k = 0; k < j; ++k) r -= l(i, k) * l(j, k);
                    l(i, j) = r / l(j, j);
                }
            } else if (diag >= -1e-14 * scale) {
                // semidefinite pivot: the rest of the column must vanish too
                l(j, j) = 0.0;
                for (int i = j + 1; i < d && ok; ++i) {
                    double r = a(i, j);
                    for (int k = 0; k < j; ++k) r -= l(i, k) * l(j, k);
                    if (std::abs(r) > 1e-12 * scale) ok = false;
                    l(i, j) = 0.0;
                }
            } else {
                ok = false;
            }
        }
        if (ok) return l;
    }
    throw NotPsdError("cholesky_sqrt: matrix not positive semidefinite after jitter escalation");
}

/// S_{m,P}(z) = sum_i w_i z(m + sqrt(P) beta_i) with a fixed summation order.
template <class Z>
Vec integrate(const SigmaRule& rule, Z&& z, const Vec& m, const Mat& p) {
    if (m.size() != rule.dim || p.rows() != rule.dim || p.cols() != rule.dim)
        throw DimensionError("integrate: mean/covariance dimension mismatch");
    Mat sqrt_p = cholesky_sqrt(p);
    Vec acc;
    Vec node(rule.dim);
    for (int i = 0; i < rule.count(); ++i) {
        node = m + sqrt_p * rule.nodes.col(i);
        Vec value = z(node);
        if (i == 0)
            acc = rule.weights[i] * value;
        else
            acc += rule.weights[i] * value;
    }
    return acc;
}

/// Parses "gh:P", "cubature", or "unscented:KAPPA" into a rule for dimension d.
inline SigmaRule parse_rule(const std::string& spec, int d) {
    auto colon = spec.find(':');
    std::string family = spec.substr(0, colon);
    std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (family == "gh") {
        if (arg.empty()) throw ConfigError("rule spec gh:P requires an order");
        return gauss_hermite_rule(d, std::stoi(arg));
    }
    if (family == "cubature") return cubature_rule(d);
    if (family == "unscented") {
        if (arg.empty()) throw ConfigError("rule spec unscented:KAPPA requires a parameter");
        return unscented_rule(d, std::stod(arg));
    }
    throw ConfigError("unknown sigma rule spec: " + spec);
}

}  // namespace tme
