#include "test_support.hpp"

#include "gridshield/powerflow.hpp"

#include <doctest.h>
#include <unsupported/Eigen/AutoDiff>

#include <set>

using namespace gridshield;
using namespace gridshield::testing;

namespace {

// Complex-arithmetic reference: S = V conj(I) from branch data written out longhand.
Vector reference_h(const NetworkCase& c, const MeasurementSchema& schema, const StateVector& x) {
    const auto m = static_cast<Eigen::Index>(c.bus_count());
    const Vector theta = x.bus_angles(c.slack_position());
    VectorX<Complex> v(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        v(k) = std::polar(x.vmags(k), theta(k));
    }
    VectorX<Complex> current = VectorX<Complex>::Zero(m);
    for (const auto& br : c.branches()) {
        if (!br.in_service) {
            continue;
        }
        const auto f = static_cast<Eigen::Index>(c.bus_position(br.from_bus));
        const auto t = static_cast<Eigen::Index>(c.bus_position(br.to_bus));
        const Complex series = 1.0 / Complex(br.r, br.x);
        const Complex tap = std::polar(br.tap_ratio, br.phase_shift);
        const Complex vf = v(f) / std::conj(tap);  // ideal transformer on the from side
        const Complex i_series = (vf - v(t)) * series;
        const Complex half_b(0.0, br.b_charging / 2.0);
        current(f) += (i_series + vf * half_b) / tap;
        current(t) += -i_series + v(t) * half_b;
    }
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto& bus = c.buses()[static_cast<std::size_t>(k)];
        current(k) += v(k) * Complex(bus.shunt_g, bus.shunt_b);
    }

    Vector out(static_cast<Eigen::Index>(schema.size()));
    for (const auto& e : schema) {
        const auto row = static_cast<Eigen::Index>(e.index);
        if (e.kind == MeasurementKind::Vmag) {
            out(row) = x.vmags(static_cast<Eigen::Index>(c.bus_position(e.bus)));
            continue;
        }
        if (is_injection(e.kind)) {
            const auto k = static_cast<Eigen::Index>(c.bus_position(e.bus));
            const Complex s = v(k) * std::conj(current(k));
            out(row) = e.kind == MeasurementKind::Pinj ? s.real() : s.imag();
            continue;
        }
        Complex s(0.0, 0.0);
        for (const auto& br : c.branches()) {
            if (!br.in_service) {
                continue;
            }
            const bool forward = br.from_bus == e.from && br.to_bus == e.to;
            const bool backward = br.from_bus == e.to && br.to_bus == e.from;
            if (!forward && !backward) {
                continue;
            }
            const auto f = static_cast<Eigen::Index>(c.bus_position(br.from_bus));
            const auto t = static_cast<Eigen::Index>(c.bus_position(br.to_bus));
            const Complex series = 1.0 / Complex(br.r, br.x);
            const Complex tap = std::polar(br.tap_ratio, br.phase_shift);
            const Complex vf = v(f) / std::conj(tap);
            const Complex i_series = (vf - v(t)) * series;
            const Complex half_b(0.0, br.b_charging / 2.0);
            if (forward) {
                s += v(f) * std::conj((i_series + vf * half_b) / tap);
            } else {
                s += v(t) * std::conj(-i_series + v(t) * half_b);
            }
        }
        out(row) = e.kind == MeasurementKind::Pflow ? s.real() : s.imag();
    }
    return out;
}

}  // namespace

TEST_CASE("flat state with no shunts gives zero flows and injections") {
    const auto c = parse_case(two_bus_text());
    const MeasurementFunction f(c, build_schema(c));
    StateVector x = StateVector::flat(2);
    x.vmags << 1.05, 1.05;
    const Vector z = eval_h(f, x);
    for (const auto& e : f.schema()) {
        if (e.kind == MeasurementKind::Vmag) {
            CHECK(z(static_cast<Eigen::Index>(e.index)) == 1.05);
        } else {
            CHECK(z(static_cast<Eigen::Index>(e.index)) == 0.0);
        }
    }
}

TEST_CASE("slack injection equals flow out of the slack on a radial line") {
    const auto c = parse_case(two_bus_text(60.0, 20.0));
    const MeasurementFunction f(c, build_schema(c));
    const auto pf = solve_powerflow(c, base_loads(c));
    const Vector z = eval_h(f, pf.state);
    // Layout: V1 V2 P1 P2 Q1 Q2 Pf(1,2) Qf(1,2)
    CHECK(z(2) == doctest::Approx(z(6)).epsilon(1e-12));
    CHECK(z(4) == doctest::Approx(z(7)).epsilon(1e-12));
}

TEST_CASE("h matches an independent complex-arithmetic evaluation on IEEE 14") {
    const auto& c = case14();
    MeteringPlan plan;
    plan.flows_at_both_ends = true;
    const MeasurementFunction f(c, build_schema(c, plan));
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_state(c.bus_count(), rng);
        const Vector got = eval_h(f, x);
        const Vector want = reference_h(c, f.schema(), x);
        CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("aggregated parallel-circuit flows match the complex reference on IEEE 118") {
    const auto& c = case118();
    const MeasurementFunction f(c, build_schema(c));
    std::mt19937_64 rng(118);
    const auto x = random_state(c.bus_count(), rng);
    CHECK((eval_h(f, x) - reference_h(c, f.schema(), x)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("analytic Jacobian agrees with central finite differences") {
    for (const auto* c : {&case14(), &case118()}) {
        const MeasurementFunction f(*c, build_schema(*c));
        std::mt19937_64 rng(c->bus_count());
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const Vector x = random_state(c->bus_count(), rng).packed();
            const Matrix analytic = f.jacobian(x).toDense();
            const Matrix numeric = finite_difference_jacobian(f, x);
            worst = std::max(worst, (analytic - numeric).cwiseAbs().maxCoeff());
        }
        INFO(c->name() << " worst error " << worst);
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("analytic Jacobian agrees with forward-mode automatic differentiation") {
    using Derivatives = Eigen::VectorXd;
    using Dual = Eigen::AutoDiffScalar<Derivatives>;
    const auto& c = case14();
    const MeasurementFunction f(c, build_schema(c));
    std::mt19937_64 rng(7);
    const Vector x = random_state(c.bus_count(), rng).packed();
    const auto n = x.size();
    VectorX<Dual> xd(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        xd(k) = Dual(x(k), n, k);
    }
    const VectorX<Dual> zd = f.evaluate(xd);
    Matrix ad(zd.size(), n);
    for (Eigen::Index r = 0; r < zd.size(); ++r) {
        ad.row(r) = zd(r).derivatives().transpose();
    }
    CHECK((f.jacobian(x).toDense() - ad).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Jacobian sparsity follows the measurement kind") {
    const auto& c = case14();
    const MeasurementFunction f(c, build_schema(c));
    std::mt19937_64 rng(3);
    const Matrix h = f.jacobian(random_state(c.bus_count(), rng).packed()).toDense();
    for (const auto& e : f.schema()) {
        const auto row = static_cast<Eigen::Index>(e.index);
        std::set<Eigen::Index> allowed;
        if (e.kind == MeasurementKind::Vmag) {
            allowed.insert(f.vmag_column(c.bus_position(e.bus)));
            CHECK(h(row, f.vmag_column(c.bus_position(e.bus))) == 1.0);
        } else if (is_flow(e.kind)) {
            for (const int id : {e.from, e.to}) {
                const auto pos = c.bus_position(id);
                if (f.angle_column(pos) >= 0) {
                    allowed.insert(f.angle_column(pos));
                }
                allowed.insert(f.vmag_column(pos));
            }
        } else {
            continue;
        }
        for (Eigen::Index col = 0; col < h.cols(); ++col) {
            if (!allowed.contains(col)) {
                CHECK(h(row, col) == 0.0);
            }
        }
    }
}

TEST_CASE("state vector packing") {
    std::mt19937_64 rng(1);
    const auto s = random_state(5, rng);
    CHECK(s.packed().size() == 9);
    CHECK(StateVector::unpack(s.packed(), 5) == s);
    CHECK_THROWS_AS(StateVector::unpack(Vector::Zero(8), 5), ValidationError);
    const Vector full = s.bus_angles(2);
    CHECK(full(2) == 0.0);
    CHECK(full(3) == s.angles(2));
}
