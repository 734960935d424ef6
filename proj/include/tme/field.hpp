#pragma once

#include <Eigen/Core>
#include <boost/container/small_vector.hpp>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <utility>

#include "tme/dual.hpp"
#include "tme/errors.hpp"

namespace tme {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Deepest dual-tower level instantiated by the library.
inline constexpr int kMaxTowerLevel = 8;
/// Default nesting budget; level 6 supports two derivative orders per
/// generator application up to expansion order 3.
inline constexpr int kDefaultMaxNest = 6;

/// Runtime evaluation settings threaded through every field evaluation.
struct EvalContext {
    int max_depth = kDefaultMaxNest;
};

template <class S>
using ArgBuf = boost::container::small_vector<S, 8>;

[[noreturn]] inline void throw_depth_exceeded(int requested, int budget) {
    throw DepthExceededError("derivative nesting depth " + std::to_string(requested) +
                             " exceeds the configured maximum of " + std::to_string(budget));
}

#define TME_TOWER_LEVELS(X) X(0) X(1) X(2) X(3) X(4) X(5) X(6) X(7) X(8)

/// Type-erased scalar field R^d -> R, evaluable at every dual-tower level so
/// that gradients and Hessians of composed fields stay exact under nesting.
class FieldImpl {
public:
    virtual ~FieldImpl() = default;
    virtual int dim() const noexcept = 0;
#define X(K) \
    virtual TowerScalar<K> eval(std::span<const TowerScalar<K>> x, const EvalContext& ctx) const = 0;
    TME_TOWER_LEVELS(X)
#undef X
};

/// CRTP adapter: derived classes implement a single `eval_t<S>` template.
template <class Derived>
class FieldBase : public FieldImpl {
    const Derived& self() const { return static_cast<const Derived&>(*this); }

public:
#define X(K)                                                                                 \
    TowerScalar<K> eval(std::span<const TowerScalar<K>> x, const EvalContext& ctx) const     \
        override {                                                                           \
        return self().template eval_t<TowerScalar<K>>(x, ctx);                               \
    }
    TME_TOWER_LEVELS(X)
#undef X
};

/// Evaluates `impl` with argument lifted one dual level, seeded along
/// coordinate `direction`; returns the directional-derivative slot.
template <class S>
Dual<S> lift_eval(const FieldImpl& impl, std::span<const S> x, int direction,
                  const EvalContext& ctx) {
    constexpr int level = dual_level_v<S>;
    if constexpr (level + 1 > kMaxTowerLevel) {
        throw_depth_exceeded(level + 1, kMaxTowerLevel);
    } else {
        if (level + 1 > ctx.max_depth) throw_depth_exceeded(level + 1, ctx.max_depth);
        ArgBuf<Dual<S>> lifted(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            lifted[i] = Dual<S>{x[i], S(i == static_cast<std::size_t>(direction) ? 1.0 : 0.0)};
        return impl.eval(std::span<const Dual<S>>(lifted.data(), lifted.size()), ctx);
    }
}

namespace detail {

template <class F>
class LambdaField final : public FieldBase<LambdaField<F>> {
    int dim_;
    F f_;

public:
    LambdaField(int dim, F f) : dim_(dim), f_(std::move(f)) {}
    int dim() const noexcept override { return dim_; }
    template <class S>
    S eval_t(std::span<const S> x, const EvalContext&) const {
        return f_(x);
    }
};

class ConstantField final : public FieldBase<ConstantField> {
    int dim_;
    double value_;

public:
    ConstantField(int dim, double value) : dim_(dim), value_(value) {}
    int dim() const noexcept override { return dim_; }
    double value() const noexcept { return value_; }
    template <class S>
    S eval_t(std::span<const S>, const EvalContext&) const {
        return S(value_);
    }
};

class CoordinateField final : public FieldBase<CoordinateField> {
    int dim_;
    int index_;

public:
    CoordinateField(int dim, int index) : dim_(dim), index_(index) {
        if (index < 0 || index >= dim)
            throw DimensionError("coordinate index out of range");
    }
    int dim() const noexcept override { return dim_; }
    template <class S>
    S eval_t(std::span<const S> x, const EvalContext&) const {
        return x[static_cast<std::size_t>(index_)];
    }
};

class DerivativeField final : public FieldBase<DerivativeField> {
    std::shared_ptr<const FieldImpl> base_;
    int direction_;

public:
    DerivativeField(std::shared_ptr<const FieldImpl> base, int direction)
        : base_(std::move(base)), direction_(direction) {
        if (direction < 0 || direction >= base_->dim())
            throw DimensionError("derivative direction out of range");
    }
    int dim() const noexcept override { return base_->dim(); }
    template <class S>
    S eval_t(std::span<const S> x, const EvalContext& ctx) const {
        return lift_eval(*base_, x, direction_, ctx).d;
    }
};

enum class BinOp { add, sub, mul };

class BinaryField final : public FieldBase<BinaryField> {
    std::shared_ptr<const FieldImpl> lhs_, rhs_;
    BinOp op_;

public:
    BinaryField(std::shared_ptr<const FieldImpl> lhs, std::shared_ptr<const FieldImpl> rhs,
                BinOp op)
        : lhs_(std::move(lhs)), rhs_(std::move(rhs)), op_(op) {
        if (lhs_->dim() != rhs_->dim())
            throw DimensionError("field arithmetic requires matching dimensions");
    }
    int dim() const noexcept override { return lhs_->dim(); }
    template <class S>
    S eval_t(std::span<const S> x, const EvalContext& ctx) const {
        S a = lhs_->eval(x, ctx);
        S b = rhs_->eval(x, ctx);
        switch (op_) {
            case BinOp::add: return a + b;
            case BinOp::sub: return a - b;
            default: return a * b;
        }
    }
};

}  // namespace detail

/// Value-semantic handle to an immutable scalar field. Fields compose with
/// +,-,* and with derivative(); all compositions stay differentiable up to
/// the nesting budget of the evaluation context.
class ScalarField {
    std::shared_ptr<const FieldImpl> impl_;

public:
    ScalarField() = default;
    explicit ScalarField(std::shared_ptr<const FieldImpl> impl) : impl_(std::move(impl)) {}

    int dim() const { return impl_->dim(); }
    const FieldImpl& impl() const { return *impl_; }
    std::shared_ptr<const FieldImpl> ptr() const { return impl_; }

    /// Constant value if this node is a plain constant, otherwise empty.
    std::optional<double> as_constant() const {
        if (auto* c = dynamic_cast<const detail::ConstantField*>(impl_.get()))
            return c->value();
        return std::nullopt;
    }

    template <class S>
    S operator()(std::span<const S> x, const EvalContext& ctx = {}) const {
        if (static_cast<int>(x.size()) != impl_->dim())
            throw DimensionError("field argument has length " + std::to_string(x.size()) +
                                 ", expected " + std::to_string(impl_->dim()));
        return impl_->eval(x, ctx);
    }

    double operator()(const Vec& x, const EvalContext& ctx = {}) const {
        return (*this)(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                       ctx);
    }
};

template <class F>
ScalarField make_field(int dim, F f) {
    return ScalarField(std::make_shared<detail::LambdaField<F>>(dim, std::move(f)));
}

inline ScalarField constant_field(int dim, double value) {
    return ScalarField(std::make_shared<detail::ConstantField>(dim, value));
}

inline ScalarField coordinate_field(int dim, int index) {
    return ScalarField(std::make_shared<detail::CoordinateField>(dim, index));
}

/// Field computing the partial derivative of `f` along `direction`. The
/// result is itself a field and can be differentiated again (nesting).
inline ScalarField derivative(const ScalarField& f, int direction) {
    return ScalarField(std::make_shared<detail::DerivativeField>(f.ptr(), direction));
}

inline ScalarField operator+(const ScalarField& a, const ScalarField& b) {
    return ScalarField(
        std::make_shared<detail::BinaryField>(a.ptr(), b.ptr(), detail::BinOp::add));
}
inline ScalarField operator-(const ScalarField& a, const ScalarField& b) {
    return ScalarField(
        std::make_shared<detail::BinaryField>(a.ptr(), b.ptr(), detail::BinOp::sub));
}
inline ScalarField operator*(const ScalarField& a, const ScalarField& b) {
    return ScalarField(
        std::make_shared<detail::BinaryField>(a.ptr(), b.ptr(), detail::BinOp::mul));
}
inline ScalarField operator*(double c, const ScalarField& f) {
    return constant_field(f.dim(), c) * f;
}
inline ScalarField operator*(const ScalarField& f, double c) {
    return c * f;
}
inline ScalarField operator+(const ScalarField& f, double c) {
    return f + constant_field(f.dim(), c);
}
inline ScalarField operator-(const ScalarField& f, double c) {
    return f - constant_field(f.dim(), c);
}

/// Directional-derivative helper usable inside generic field lambdas: the
/// argument may already be dual-valued, enabling nested differentiation.
template <class S>
S partial_at(const ScalarField& f, std::span<const S> x, int direction,
             const EvalContext& ctx = {}) {
    return lift_eval(f.impl(), x, direction, ctx).d;
}

namespace detail {
inline std::span<const double> as_span(const Vec& x) {
    return {x.data(), static_cast<std::size_t>(x.size())};
}
}  // namespace detail

/// Exact gradient of `f` at `x` by forward-mode differentiation.
inline Vec gradient(const ScalarField& f, const Vec& x, int max_depth = kDefaultMaxNest) {
    const int d = f.dim();
    if (x.size() != d) throw DimensionError("gradient: argument length mismatch");
    EvalContext ctx{max_depth};
    Vec g(d);
    for (int j = 0; j < d; ++j)
        g[j] = lift_eval(f.impl(), detail::as_span(x), j, ctx).d;
    if (!g.allFinite())
        throw EvaluationError("gradient evaluation produced a non-finite value");
    return g;
}

/// Exact Hessian of `f` at `x`; symmetrized as (H + H^T)/2.
inline Mat hessian(const ScalarField& f, const Vec& x, int max_depth = kDefaultMaxNest) {
    const int d = f.dim();
    if (x.size() != d) throw DimensionError("hessian: argument length mismatch");
    EvalContext ctx{max_depth};
    if (2 > max_depth) throw_depth_exceeded(2, max_depth);
    Mat h(d, d);
    ArgBuf<Dual<Dual<double>>> lifted(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) {
            for (int p = 0; p < d; ++p)
                lifted[static_cast<std::size_t>(p)] =
                    Dual<Dual<double>>{Dual<double>{x[p], p == j ? 1.0 : 0.0},
                                       Dual<double>{p == i ? 1.0 : 0.0, 0.0}};
            auto r = f.impl().eval(
                std::span<const Dual<Dual<double>>>(lifted.data(), lifted.size()), ctx);
            h(i, j) = r.d.d;
            h(j, i) = r.d.d;
        }
    }
    h = 0.5 * (h + h.transpose()).eval();
    if (!h.allFinite())
        throw EvaluationError("hessian evaluation produced a non-finite value");
    return h;
}

}  // namespace tme
