#pragma once

#include "gridshield/case.hpp"
#include "gridshield/schema.hpp"
#include "gridshield/types.hpp"
#include "gridshield/ybus.hpp"

#include <cmath>
#include <vector>

namespace gridshield {

/// Bus voltage state with the slack angle removed. `angles` holds one entry per
/// non-slack bus in bus order; `vmags` one entry per bus. The packed form used
/// by the estimators is [angles; vmags] of length N = 2M - 1.
struct StateVector {
    Vector angles;
    Vector vmags;

    static StateVector flat(std::size_t bus_count);
    static StateVector unpack(const Eigen::Ref<const Vector>& x, std::size_t bus_count);

    Vector packed() const;
    std::size_t bus_count() const { return static_cast<std::size_t>(vmags.size()); }
    /// Angles for every bus with the slack entry set to zero.
    Vector bus_angles(std::size_t slack) const;

    bool operator==(const StateVector& o) const { return angles == o.angles && vmags == o.vmags; }
};

/// d x N matrix of partial derivatives of h at a state.
struct Jacobian {
    SparseMatrix h_matrix;
};

/// The nonlinear AC measurement model z = h(x) for one schema on one network.
class MeasurementFunction {
public:
    MeasurementFunction(const NetworkCase& network, MeasurementSchema schema);

    const MeasurementSchema& schema() const noexcept { return schema_; }
    const AdmittanceMatrix& admittance() const noexcept { return ybus_; }
    std::size_t size() const noexcept { return meters_.size(); }
    std::size_t bus_count() const noexcept { return bus_count_; }
    std::size_t state_size() const noexcept { return 2 * bus_count_ - 1; }
    std::size_t slack() const noexcept { return slack_; }

    /// State column holding the angle of a bus position, or -1 for the slack.
    Eigen::Index angle_column(std::size_t bus) const {
        if (bus == slack_) {
            return -1;
        }
        return static_cast<Eigen::Index>(bus < slack_ ? bus : bus - 1);
    }
    Eigen::Index vmag_column(std::size_t bus) const { return static_cast<Eigen::Index>(bus_count_ - 1 + bus); }

    /// Polar-form evaluation of every meter at the packed state `x`.
    template <typename Derived>
    VectorX<typename Derived::Scalar> evaluate(const Eigen::MatrixBase<Derived>& x) const;

    /// Analytic d x N Jacobian at the packed state `x`.
    SparseMatrix jacobian(const Vector& x) const;

    /// Active and reactive injections at every bus (into the network), pu.
    template <typename Derived>
    void bus_injections(const Eigen::MatrixBase<Derived>& x, VectorX<typename Derived::Scalar>& p,
                        VectorX<typename Derived::Scalar>& q) const;

private:
    struct Meter {
        MeasurementKind kind;
        std::size_t a = 0;  // bus position (flow: metered end)
        std::size_t b = 0;  // flow: far end
        Complex y_self;     // flow: sum of self admittances at the metered end
        Complex y_mutual;   // flow: sum of transfer admittances towards the far end
    };

    template <typename T>
    void expand(const Eigen::Ref<const VectorX<T>>& x, VectorX<T>& theta, VectorX<T>& vm) const;

    MeasurementSchema schema_;
    AdmittanceMatrix ybus_;
    std::vector<Meter> meters_;
    std::size_t bus_count_ = 0;
    std::size_t slack_ = 0;
};

/// z = h(x) without noise.
inline Vector eval_h(const MeasurementFunction& f, const StateVector& x) { return f.evaluate(x.packed()); }

inline Jacobian eval_jacobian(const MeasurementFunction& f, const StateVector& x) {
    return Jacobian{f.jacobian(x.packed())};
}

// ---------------------------------------------------------------------------

template <typename T>
void MeasurementFunction::expand(const Eigen::Ref<const VectorX<T>>& x, VectorX<T>& theta, VectorX<T>& vm) const {
    const auto m = static_cast<Eigen::Index>(bus_count_);
    theta.resize(m);
    vm = x.tail(m);
    // Reference angle as a zero carrying x's derivative layout (matters for dual-number scalars).
    const T reference = x(0) * 0.0;
    for (std::size_t k = 0; k < bus_count_; ++k) {
        const auto col = angle_column(k);
        theta(static_cast<Eigen::Index>(k)) = col < 0 ? reference : x(col);
    }
}

template <typename Derived>
void MeasurementFunction::bus_injections(const Eigen::MatrixBase<Derived>& x, VectorX<typename Derived::Scalar>& p,
                                         VectorX<typename Derived::Scalar>& q) const {
    using T = typename Derived::Scalar;
    using std::cos;
    using std::sin;
    const VectorX<T> xs = x;
    VectorX<T> theta;
    VectorX<T> vm;
    expand<T>(xs, theta, vm);
    const auto m = static_cast<Eigen::Index>(bus_count_);
    const T zero = xs(0) * 0.0;
    p.setConstant(m, zero);
    q.setConstant(m, zero);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (ComplexSparseRowMatrix::InnerIterator it(ybus_.ybus, i); it; ++it) {
            const auto j = it.col();
            const double g = it.value().real();
            const double b = it.value().imag();
            const T dt = theta(i) - theta(j);
            const T vv = vm(i) * vm(j);
            p(i) += vv * (g * cos(dt) + b * sin(dt));
            q(i) += vv * (g * sin(dt) - b * cos(dt));
        }
    }
}

template <typename Derived>
VectorX<typename Derived::Scalar> MeasurementFunction::evaluate(const Eigen::MatrixBase<Derived>& x) const {
    using T = typename Derived::Scalar;
    using std::cos;
    using std::sin;
    if (static_cast<std::size_t>(x.size()) != state_size()) {
        throw ValidationError("state has " + std::to_string(x.size()) + " entries, expected " +
                              std::to_string(state_size()));
    }
    const VectorX<T> xs = x;
    VectorX<T> theta;
    VectorX<T> vm;
    expand<T>(xs, theta, vm);

    VectorX<T> p_inj;
    VectorX<T> q_inj;
    bool need_injections = false;
    for (const auto& meter : meters_) {
        need_injections = need_injections || is_injection(meter.kind);
    }
    if (need_injections) {
        bus_injections(xs, p_inj, q_inj);
    }

    VectorX<T> out(static_cast<Eigen::Index>(meters_.size()));
    for (std::size_t k = 0; k < meters_.size(); ++k) {
        const auto& mt = meters_[k];
        const auto a = static_cast<Eigen::Index>(mt.a);
        const auto row = static_cast<Eigen::Index>(k);
        switch (mt.kind) {
            case MeasurementKind::Vmag: out(row) = vm(a); break;
            case MeasurementKind::Pinj: out(row) = p_inj(a); break;
            case MeasurementKind::Qinj: out(row) = q_inj(a); break;
            case MeasurementKind::Pflow:
            case MeasurementKind::Qflow: {
                const auto b = static_cast<Eigen::Index>(mt.b);
                const T dt = theta(a) - theta(b);
                const T vv = vm(a) * vm(b);
                const double g = mt.y_mutual.real();
                const double bm = mt.y_mutual.imag();
                if (mt.kind == MeasurementKind::Pflow) {
                    out(row) = vm(a) * vm(a) * mt.y_self.real() + vv * (g * cos(dt) + bm * sin(dt));
                } else {
                    out(row) = -vm(a) * vm(a) * mt.y_self.imag() + vv * (g * sin(dt) - bm * cos(dt));
                }
                break;
            }
        }
    }
    return out;
}

}  // namespace gridshield
