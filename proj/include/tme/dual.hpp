#pragma once

#include <cmath>
#include <type_traits>

namespace tme {

/// Forward-mode augmented number: a value and one directional derivative.
/// Nesting (Dual<Dual<...>>) propagates higher-order directional derivatives.
template <class S>
struct Dual {
    S v{};  ///< value
    S d{};  ///< directional derivative

    Dual() = default;
    Dual(double value) : v(value), d(S{}) {}  // NOLINT: constants lift implicitly
    Dual(S value, S deriv) : v(std::move(value)), d(std::move(deriv)) {}
};

template <class S>
struct dual_level : std::integral_constant<int, 0> {};
template <class S>
struct dual_level<Dual<S>> : std::integral_constant<int, 1 + dual_level<S>::value> {};
template <class S>
inline constexpr int dual_level_v = dual_level<S>::value;

template <int K>
struct tower_scalar {
    using type = Dual<typename tower_scalar<K - 1>::type>;
};
template <>
struct tower_scalar<0> {
    using type = double;
};
/// Scalar type at nesting level K of the dual tower (level 0 = double).
template <int K>
using TowerScalar = typename tower_scalar<K>::type;

/// Innermost (level-0) value of a possibly nested dual.
inline double leaf_value(double x) { return x; }
template <class S>
double leaf_value(const Dual<S>& x) {
    return leaf_value(x.v);
}

// --- arithmetic -------------------------------------------------------------

template <class S>
Dual<S> operator-(const Dual<S>& a) {
    return {-a.v, -a.d};
}
template <class S>
Dual<S> operator+(const Dual<S>& a, const Dual<S>& b) {
    return {a.v + b.v, a.d + b.d};
}
template <class S>
Dual<S> operator-(const Dual<S>& a, const Dual<S>& b) {
    return {a.v - b.v, a.d - b.d};
}
template <class S>
Dual<S> operator*(const Dual<S>& a, const Dual<S>& b) {
    return {a.v * b.v, a.v * b.d + a.d * b.v};
}
template <class S>
Dual<S> operator/(const Dual<S>& a, const Dual<S>& b) {
    S q = a.v / b.v;
    return {q, (a.d - q * b.d) / b.v};
}

template <class S>
Dual<S> operator+(const Dual<S>& a, double c) {
    return {a.v + c, a.d};
}
template <class S>
Dual<S> operator+(double c, const Dual<S>& a) {
    return {c + a.v, a.d};
}
template <class S>
Dual<S> operator-(const Dual<S>& a, double c) {
    return {a.v - c, a.d};
}
template <class S>
Dual<S> operator-(double c, const Dual<S>& a) {
    return {c - a.v, -a.d};
}
template <class S>
Dual<S> operator*(const Dual<S>& a, double c) {
    return {a.v * c, a.d * c};
}
template <class S>
Dual<S> operator*(double c, const Dual<S>& a) {
    return {c * a.v, c * a.d};
}
template <class S>
Dual<S> operator/(const Dual<S>& a, double c) {
    return {a.v / c, a.d / c};
}
template <class S>
Dual<S> operator/(double c, const Dual<S>& a) {
    S q = c / a.v;
    return {q, (-q * a.d) / a.v};
}

template <class S>
Dual<S>& operator+=(Dual<S>& a, const Dual<S>& b) {
    a.v = a.v + b.v;
    a.d = a.d + b.d;
    return a;
}
template <class S>
Dual<S>& operator-=(Dual<S>& a, const Dual<S>& b) {
    a.v = a.v - b.v;
    a.d = a.d - b.d;
    return a;
}
template <class S, class T>
Dual<S>& operator*=(Dual<S>& a, const T& b) {
    a = a * b;
    return a;
}

// --- elementary functions ---------------------------------------------------
// Each uses the chain rule on the directional part; values recurse into the
// underlying scalar so nested duals work unchanged.

inline double sq(double x) { return x * x; }
template <class S>
Dual<S> sq(const Dual<S>& x) {
    return x * x;
}

template <class S>
Dual<S> exp(const Dual<S>& x) {
    using std::exp;
    S e = exp(x.v);
    return {e, e * x.d};
}
template <class S>
Dual<S> log(const Dual<S>& x) {
    using std::log;
    return {log(x.v), x.d / x.v};
}
template <class S>
Dual<S> sqrt(const Dual<S>& x) {
    using std::sqrt;
    S s = sqrt(x.v);
    return {s, (0.5 * x.d) / s};
}
template <class S>
Dual<S> sin(const Dual<S>& x) {
    using std::cos;
    using std::sin;
    return {sin(x.v), cos(x.v) * x.d};
}
template <class S>
Dual<S> cos(const Dual<S>& x) {
    using std::cos;
    using std::sin;
    return {cos(x.v), -(sin(x.v) * x.d)};
}
template <class S>
Dual<S> tanh(const Dual<S>& x) {
    using std::tanh;
    S t = tanh(x.v);
    return {t, (1.0 - t * t) * x.d};
}

}  // namespace tme
