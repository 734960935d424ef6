#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "tme/model.hpp"

namespace tme {

/// Packed index of entry (i,j), i <= j, in the upper triangle of a d x d
/// symmetric matrix stored row by row.
inline int packed_index(int d, int i, int j) {
    return i * d - i * (i - 1) / 2 + (j - i);
}
inline int packed_size(int d) { return d * (d + 1) / 2; }

/// Type-erased vector-valued field R^d -> R^m. The generator is applied
/// elementwise, and evaluating all components in one traversal shares the
/// drift, dispersion, and nested derivative passes between them.
class VectorFieldImpl {
public:
    virtual ~VectorFieldImpl() = default;
    virtual int dim() const noexcept = 0;
    virtual int out_dim() const noexcept = 0;
#define X(K)                                                                      \
    virtual void eval(std::span<const TowerScalar<K>> x, std::span<TowerScalar<K>> out, \
                      const EvalContext& ctx) const = 0;
    TME_TOWER_LEVELS(X)
#undef X
};

template <class Derived>
class VectorFieldBase : public VectorFieldImpl {
    const Derived& self() const { return static_cast<const Derived&>(*this); }

public:
#define X(K)                                                                          \
    void eval(std::span<const TowerScalar<K>> x, std::span<TowerScalar<K>> out,       \
              const EvalContext& ctx) const override {                                \
        self().template eval_t<TowerScalar<K>>(x, out, ctx);                          \
    }
    TME_TOWER_LEVELS(X)
#undef X
};

class VectorField {
    std::shared_ptr<const VectorFieldImpl> impl_;

public:
    VectorField() = default;
    explicit VectorField(std::shared_ptr<const VectorFieldImpl> impl) : impl_(std::move(impl)) {}
    int dim() const { return impl_->dim(); }
    int out_dim() const { return impl_->out_dim(); }
    const VectorFieldImpl& impl() const { return *impl_; }
    std::shared_ptr<const VectorFieldImpl> ptr() const { return impl_; }

    template <class S>
    void operator()(std::span<const S> x, std::span<S> out, const EvalContext& ctx = {}) const {
        if (static_cast<int>(x.size()) != dim() || static_cast<int>(out.size()) != out_dim())
            throw DimensionError("vector field argument/output size mismatch");
        impl_->eval(x, out, ctx);
    }

    Vec operator()(const Vec& x, const EvalContext& ctx = {}) const {
        Vec out(out_dim());
        (*this)(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                std::span<double>(out.data(), static_cast<std::size_t>(out.size())), ctx);
        return out;
    }
};

namespace detail {

/// phi_I(x) = x.
class IdentityVectorField final : public VectorFieldBase<IdentityVectorField> {
    int dim_;

public:
    explicit IdentityVectorField(int dim) : dim_(dim) {}
    int dim() const noexcept override { return dim_; }
    int out_dim() const noexcept override { return dim_; }
    template <class S>
    void eval_t(std::span<const S> x, std::span<S> out, const EvalContext&) const {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
    }
};

/// phi_II(x) = x x^T, packed upper triangle (i <= j).
class SymmetricOuterField final : public VectorFieldBase<SymmetricOuterField> {
    int dim_;

public:
    explicit SymmetricOuterField(int dim) : dim_(dim) {}
    int dim() const noexcept override { return dim_; }
    int out_dim() const noexcept override { return packed_size(dim_); }
    template <class S>
    void eval_t(std::span<const S> x, std::span<S> out, const EvalContext&) const {
        std::size_t p = 0;
        for (int i = 0; i < dim_; ++i)
            for (int j = i; j < dim_; ++j)
                out[p++] = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
    }
};

/// [phi_I; phi_II] stacked, so one generator ladder propagates the mean and
/// covariance iterates together, sharing every drift evaluation and nested
/// derivative sweep between them.
class JointMomentBaseField final : public VectorFieldBase<JointMomentBaseField> {
    int dim_;

public:
    explicit JointMomentBaseField(int dim) : dim_(dim) {}
    int dim() const noexcept override { return dim_; }
    int out_dim() const noexcept override { return dim_ + packed_size(dim_); }
    template <class S>
    void eval_t(std::span<const S> x, std::span<S> out, const EvalContext&) const {
        const auto d = static_cast<std::size_t>(dim_);
        for (std::size_t i = 0; i < d; ++i) out[i] = x[i];
        std::size_t p = d;
        for (int i = 0; i < dim_; ++i)
            for (int j = i; j < dim_; ++j)
                out[p++] = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
    }
};

/// Adapts a collection of scalar fields to the vector interface.
class ScalarsVectorField final : public VectorFieldBase<ScalarsVectorField> {
    int dim_;
    std::vector<std::shared_ptr<const FieldImpl>> entries_;

public:
    ScalarsVectorField(int dim, std::vector<std::shared_ptr<const FieldImpl>> entries)
        : dim_(dim), entries_(std::move(entries)) {}
    int dim() const noexcept override { return dim_; }
    int out_dim() const noexcept override { return static_cast<int>(entries_.size()); }
    template <class S>
    void eval_t(std::span<const S> x, std::span<S> out, const EvalContext& ctx) const {
        for (std::size_t e = 0; e < entries_.size(); ++e) out[e] = entries_[e]->eval(x, ctx);
    }
};

/// Elementwise generator application: out_e = (grad psi_e)^T a + tr(b b^T H psi_e)/2.
/// Gradients and Hessians of the target come from one nested dual sweep over
/// the d(d+1)/2 direction pairs; the gradient falls out of the diagonal pair.
class GeneratorVectorField final : public VectorFieldBase<GeneratorVectorField> {
    std::shared_ptr<const VectorFieldImpl> target_;
    std::vector<std::shared_ptr<const FieldImpl>> drift_;
    std::vector<std::vector<std::shared_ptr<const FieldImpl>>> dispersion_;
    std::vector<double> const_gamma_;  // packed b b^T when all entries constant
    bool constant_dispersion_ = false;
    bool diagonal_gamma_ = false;  // constant diagonal b b^T: only the diagonal
                                   // Hessian pairs contribute to tr(b b^T H)
    int d_, s_, m_;

public:
    GeneratorVectorField(std::shared_ptr<const VectorFieldImpl> target,
                         const DiffusionModel& model)
        : target_(std::move(target)), d_(model.dim), s_(model.wiener_dim),
          m_(target_->out_dim()) {
        if (target_->dim() != d_) throw DimensionError("generator target dimension mismatch");
        drift_.reserve(static_cast<std::size_t>(d_));
        for (const auto& f : model.drift) drift_.push_back(f.ptr());
        dispersion_.resize(static_cast<std::size_t>(d_));
        bool all_const = true;
        Mat b_const(d_, s_);
        for (int i = 0; i < d_; ++i) {
            for (int k = 0; k < s_; ++k) {
                const auto& f = model.dispersion[static_cast<std::size_t>(i)]
                                                [static_cast<std::size_t>(k)];
                dispersion_[static_cast<std::size_t>(i)].push_back(f.ptr());
                if (auto c = f.as_constant())
                    b_const(i, k) = *c;
                else
                    all_const = false;
            }
        }
        constant_dispersion_ = all_const;
        if (all_const) {
            const_gamma_.resize(static_cast<std::size_t>(packed_size(d_)));
            bool diag = true;
            for (int i = 0; i < d_; ++i)
                for (int j = i; j < d_; ++j) {
                    double acc = 0.0;
                    for (int k = 0; k < s_; ++k) acc += b_const(i, k) * b_const(j, k);
                    const_gamma_[static_cast<std::size_t>(packed_index(d_, i, j))] = acc;
                    if (i != j && acc != 0.0) diag = false;
                }
            diagonal_gamma_ = diag;
        }
    }

    int dim() const noexcept override { return d_; }
    int out_dim() const noexcept override { return m_; }

    template <class S>
    void eval_t(std::span<const S> x, std::span<S> out, const EvalContext& ctx) const {
        constexpr int level = dual_level_v<S>;
        if constexpr (level + 2 > kMaxTowerLevel) {
            throw_depth_exceeded(level + 2, kMaxTowerLevel);
        } else {
            if (level + 2 > ctx.max_depth) throw_depth_exceeded(level + 2, ctx.max_depth);
            const auto d = static_cast<std::size_t>(d_);
            const auto m = static_cast<std::size_t>(m_);

            ArgBuf<S> a(d);
            for (std::size_t i = 0; i < d; ++i) a[i] = drift_[i]->eval(x, ctx);

            ArgBuf<S> gamma;
            if (!constant_dispersion_) {
                ArgBuf<S> b(d * static_cast<std::size_t>(s_));
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t k = 0; k < static_cast<std::size_t>(s_); ++k)
                        b[i * static_cast<std::size_t>(s_) + k] = dispersion_[i][k]->eval(x, ctx);
                gamma.resize(static_cast<std::size_t>(packed_size(d_)));
                for (int i = 0; i < d_; ++i)
                    for (int j = i; j < d_; ++j) {
                        S acc(0.0);
                        for (int k = 0; k < s_; ++k)
                            acc += b[static_cast<std::size_t>(i * s_ + k)] *
                                   b[static_cast<std::size_t>(j * s_ + k)];
                        gamma[static_cast<std::size_t>(packed_index(d_, i, j))] = acc;
                    }
            }

            using D2 = Dual<Dual<S>>;
            ArgBuf<D2> lifted(d);
            boost::container::small_vector<S, 16> grad_dot(m, S(0.0));
            boost::container::small_vector<S, 16> trace_acc(m, S(0.0));
            boost::container::small_vector<D2, 16> nested(m);

            for (int i = 0; i < d_; ++i) {
                const int j_end = diagonal_gamma_ ? i : d_ - 1;
                for (int j = i; j <= j_end; ++j) {
                    for (std::size_t p = 0; p < d; ++p)
                        lifted[p] = D2{
                            Dual<S>{x[p], S(static_cast<int>(p) == j ? 1.0 : 0.0)},
                            Dual<S>{S(static_cast<int>(p) == i ? 1.0 : 0.0), S(0.0)}};
                    target_->eval(std::span<const D2>(lifted.data(), lifted.size()),
                                  std::span<D2>(nested.data(), nested.size()), ctx);
                    const double pair_weight = (i == j) ? 1.0 : 2.0;
                    const std::size_t pk = static_cast<std::size_t>(packed_index(d_, i, j));
                    for (std::size_t e = 0; e < m; ++e) {
                        // nested[e].d.d = d2 psi_e / dx_i dx_j; nested[e].d.v = d psi_e / dx_i
                        if (constant_dispersion_)
                            trace_acc[e] += (pair_weight * const_gamma_[pk]) * nested[e].d.d;
                        else
                            trace_acc[e] += pair_weight * (gamma[pk] * nested[e].d.d);
                        if (i == j)
                            grad_dot[e] += nested[e].d.v * a[static_cast<std::size_t>(i)];
                    }
                }
            }
            for (std::size_t e = 0; e < m; ++e) out[e] = grad_dot[e] + 0.5 * trace_acc[e];
        }
    }
};

/// Scalar view of component `index` of a vector field.
class VectorComponentField final : public FieldBase<VectorComponentField> {
    std::shared_ptr<const VectorFieldImpl> base_;
    int index_;

public:
    VectorComponentField(std::shared_ptr<const VectorFieldImpl> base, int index)
        : base_(std::move(base)), index_(index) {
        if (index < 0 || index >= base_->out_dim())
            throw DimensionError("vector component index out of range");
    }
    int dim() const noexcept override { return base_->dim(); }
    template <class S>
    S eval_t(std::span<const S> x, const EvalContext& ctx) const {
        boost::container::small_vector<S, 16> out(static_cast<std::size_t>(base_->out_dim()));
        base_->eval(x, std::span<S>(out.data(), out.size()), ctx);
        return out[static_cast<std::size_t>(index_)];
    }
};

}  // namespace detail

inline VectorField identity_vector_field(int dim) {
    return VectorField(std::make_shared<detail::IdentityVectorField>(dim));
}

inline VectorField symmetric_outer_field(int dim) {
    return VectorField(std::make_shared<detail::SymmetricOuterField>(dim));
}

inline VectorField vector_field_from(int dim, const std::vector<ScalarField>& entries) {
    std::vector<std::shared_ptr<const FieldImpl>> ptrs;
    ptrs.reserve(entries.size());
    for (const auto& f : entries) {
        if (f.dim() != dim) throw DimensionError("vector field entry dimension mismatch");
        ptrs.push_back(f.ptr());
    }
    return VectorField(std::make_shared<detail::ScalarsVectorField>(dim, std::move(ptrs)));
}

/// Generator applied elementwise to a vector-valued target.
inline VectorField apply_generator(const VectorField& target, const DiffusionModel& model) {
    return VectorField(
        std::make_shared<detail::GeneratorVectorField>(target.ptr(), model));
}

/// A phi = (grad phi)^T a + tr(b b^T H phi)/2 for a scalar target. The result
/// is again a field, so the generator can be iterated.
inline ScalarField apply_generator(const ScalarField& phi, const DiffusionModel& model) {
    if (phi.dim() != model.dim) throw DimensionError("apply_generator: dimension mismatch");
    auto vf = vector_field_from(model.dim, {phi});
    auto gen = std::make_shared<detail::GeneratorVectorField>(vf.ptr(), model);
    return ScalarField(std::make_shared<detail::VectorComponentField>(std::move(gen), 0));
}

/// Reusable generator iterates of the stacked target [phi_I; phi_II]:
/// joint[r] = A^r [x; packed x x^T], built once per (model, order) and
/// evaluated at many quadrature nodes.
struct GeneratorIterates {
    int dim = 0;
    int order = 0;
    std::vector<VectorField> joint;  // r = 0..M, d + d(d+1)/2 outputs each
};

inline GeneratorIterates build_generator_iterates(const DiffusionModel& model, int order) {
    if (order < 1) throw ConfigError("generator iterates require order >= 1");
    GeneratorIterates it;
    it.dim = model.dim;
    it.order = order;
    it.joint.push_back(
        VectorField(std::make_shared<detail::JointMomentBaseField>(model.dim)));
    for (int r = 1; r <= order; ++r) it.joint.push_back(apply_generator(it.joint.back(), model));
    return it;
}

/// Values of all iterates at a single point, split back into the mean chain
/// A^r phi_I and the packed square chain A^r phi_II.
struct IterateValues {
    std::vector<Vec> mean;    // r = 0..M, length d
    std::vector<Vec> square;  // r = 0..M, packed length d(d+1)/2
};

inline IterateValues eval_iterates(const GeneratorIterates& it, const Vec& x,
                                   const EvalContext& ctx = {}) {
    IterateValues v;
    const auto n = it.joint.size();
    v.mean.resize(n);
    v.square.resize(n);
    auto xs = std::span<const double>(x.data(), static_cast<std::size_t>(x.size()));
    const auto d = static_cast<std::size_t>(it.dim);
    const auto pd = static_cast<std::size_t>(packed_size(it.dim));
    boost::container::small_vector<double, 24> buf(d + pd);
    for (std::size_t r = 0; r < n; ++r) {
        it.joint[r](xs, std::span<double>(buf.data(), buf.size()), ctx);
        v.mean[r] = Eigen::Map<const Vec>(buf.data(), static_cast<Eigen::Index>(d));
        v.square[r] =
            Eigen::Map<const Vec>(buf.data() + d, static_cast<Eigen::Index>(pd));
    }
    return v;
}

}  // namespace tme
