#include "test_support.hpp"

#include "gridshield/powerflow.hpp"

#include <doctest.h>

#include <cmath>

using namespace gridshield;
using namespace gridshield::testing;

TEST_CASE("two-bus case with no load sits at the flat solution") {
    const auto c = parse_case(two_bus_text());
    const auto pf = solve_powerflow(c, base_loads(c));
    CHECK(pf.state.angles.cwiseAbs().maxCoeff() == 0.0);
    CHECK(pf.state.vmags(0) == 1.0);
    CHECK(pf.state.vmags(1) == 1.0);
    CHECK(pf.iterations == 0);
}

TEST_CASE("two-bus solution satisfies the polar mismatch equations") {
    const auto c = parse_case(two_bus_text(100.0, 0.0));
    const auto pf = solve_powerflow(c, base_loads(c));
    const double v1 = pf.state.vmags(0);
    const double v2 = pf.state.vmags(1);
    const double t21 = pf.state.angles(0);  // slack angle is zero
    // Y12 = j10, Y22 = -j10: P2 = 10 V1 V2 sin(t21), Q2 = -10 V1 V2 cos(t21) + 10 V2^2.
    const double p2 = 10.0 * v1 * v2 * std::sin(t21);
    const double q2 = -10.0 * v1 * v2 * std::cos(t21) + 10.0 * v2 * v2;
    CHECK(std::abs(p2 - (-1.0)) < 1e-8);
    CHECK(std::abs(q2 - 0.0) < 1e-8);
    CHECK(pf.mismatch < 1e-8);
}

TEST_CASE("IEEE 118 base case converges quickly and matches an external solver") {
    const auto& c = case118();
    const auto pf = solve_powerflow(c, base_loads(c));
    CHECK(pf.iterations <= 6);
    CHECK(pf.mismatch < 1e-8);

    // Independent mismatch evaluation at the returned state.
    const PowerFlowSolver solver(c);
    Vector p;
    Vector q;
    solver.injections(pf.state, p, q);
    const Vector p_spec = c.scheduled_p_gen() - base_loads(c).p;
    for (std::size_t k = 0; k < c.bus_count(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        if (c.buses()[k].kind != BusKind::Slack) {
            CHECK(std::abs(p(i) - p_spec(i)) < 1e-8);
        }
        if (c.buses()[k].kind == BusKind::PQ) {
            CHECK(std::abs(q(i) + c.buses()[k].load_q) < 1e-8);
        }
    }

    // Frozen values from a MATPOWER-compatible solver (angles relative to bus 69).
    const Vector theta = pf.state.bus_angles(c.slack_position());
    const auto check_bus = [&](int id, double vm, double va) {
        const auto pos = static_cast<Eigen::Index>(c.bus_position(id));
        CHECK(pf.state.vmags(pos) == doctest::Approx(vm).epsilon(1e-7));
        CHECK(theta(pos) == doctest::Approx(va).epsilon(1e-7));
    };
    check_bus(1, 0.955, -0.33208833495697976);
    check_bus(5, 1.001984636903266, -0.24401136693155723);
    check_bus(37, 0.9906613524318398, -0.31474082297165745);
    check_bus(117, 0.9738244468092151, -0.3325216712427598);
    CHECK((p(static_cast<Eigen::Index>(c.slack_position())) + c.buses()[c.slack_position()].load_p) * 100.0 ==
          doctest::Approx(513.86287189).epsilon(1e-7));
}

TEST_CASE("total injection equals non-negative network losses") {
    const auto& c = case118();
    const auto pf = solve_powerflow(c, base_loads(c));
    const PowerFlowSolver solver(c);
    Vector p;
    Vector q;
    solver.injections(pf.state, p, q);

    // Losses summed branch by branch from both terminal flows.
    const auto y = build_ybus(c);
    const Vector theta = pf.state.bus_angles(c.slack_position());
    double losses = 0.0;
    for (const auto& br : y.branches) {
        const auto f = static_cast<Eigen::Index>(br.from);
        const auto t = static_cast<Eigen::Index>(br.to);
        const Complex vf = std::polar(pf.state.vmags(f), theta(f));
        const Complex vt = std::polar(pf.state.vmags(t), theta(t));
        losses += (vf * std::conj(br.yff * vf + br.yft * vt)).real();
        losses += (vt * std::conj(br.ytf * vf + br.ytt * vt)).real();
    }
    CHECK(losses >= 0.0);
    CHECK(std::abs(p.sum() - losses) < 1e-8);
}

TEST_CASE("power flow is deterministic") {
    const auto& c = case118();
    LoadVector loads = base_loads(c);
    loads.p *= 1.07;
    loads.q *= 0.93;
    const auto a = solve_powerflow(c, loads);
    const auto b = solve_powerflow(c, loads);
    CHECK(a.state == b.state);
    CHECK(a.iterations == b.iterations);
}

TEST_CASE("non-convergence and bad input are reported") {
    const auto c = parse_case(two_bus_text(100.0, 0.0));
    PowerFlowOptions one_step;
    one_step.max_iterations = 1;
    try {
        (void)solve_powerflow(c, base_loads(c), one_step);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.iterations() == 1);
        CHECK(e.residual_norm() > 1e-8);
    }
    // Beyond the 5 pu transfer limit of an x = 0.1 line.
    const auto overloaded = parse_case(two_bus_text(900.0, 0.0));
    CHECK_THROWS_AS(solve_powerflow(overloaded, base_loads(overloaded)), Error);

    LoadVector bad = base_loads(c);
    bad.p(1) = std::nan("");
    CHECK_THROWS_AS(solve_powerflow(c, bad), ValidationError);
}

TEST_CASE("reactive limits switch PV buses to PQ when enabled") {
    auto text = three_bus_text();
    // Tighten bus 2 limits to +-5 MVAr.
    text.replace(text.find("2 40 0 100 -100"), 15, "2 40 0 5 -5");
    const auto c = parse_case(text);
    const auto loose = solve_powerflow(c, base_loads(c));
    CHECK(loose.switched_to_pq.empty());

    PowerFlowOptions limits;
    limits.enforce_q_limits = true;
    const auto tight = solve_powerflow(c, base_loads(c), limits);
    REQUIRE(tight.switched_to_pq.size() == 1);
    CHECK(tight.switched_to_pq[0] == 2);
    const PowerFlowSolver solver(c);
    Vector p;
    Vector q;
    solver.injections(tight.state, p, q);
    const double q_gen = q(1) + c.buses()[1].load_q;
    CHECK((std::abs(q_gen - 0.05) < 1e-8 || std::abs(q_gen + 0.05) < 1e-8));
}
