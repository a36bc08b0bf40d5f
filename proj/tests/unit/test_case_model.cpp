#include "test_support.hpp"

#include "gridshield/schema.hpp"
#include "gridshield/ybus.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace gridshield;
using gridshield::testing::case118;
using gridshield::testing::case14;
using gridshield::testing::two_bus_text;

TEST_CASE("minimal two-bus case parses") {
    const auto c = parse_case(two_bus_text(), "two_bus");
    CHECK(c.bus_count() == 2);
    CHECK(c.branches().size() == 1);
    CHECK(c.generators().size() == 1);
    CHECK(c.buses()[c.slack_position()].id == 1);
    CHECK(c.branches()[0].tap_ratio == 1.0);
}

TEST_CASE("IEEE 118 case parses with per-unit conversion") {
    const auto& c = case118();
    CHECK(c.bus_count() == 118);
    CHECK(c.branches().size() == 186);
    CHECK(c.buses()[c.slack_position()].id == 69);
    // Bus 1 carries 51 MW / 27 MVAr on a 100 MVA base.
    CHECK(c.buses()[c.bus_position(1)].load_p == doctest::Approx(0.51));
    CHECK(c.buses()[c.bus_position(1)].load_q == doctest::Approx(0.27));
}

TEST_CASE("two slack buses is a semantic error naming both") {
    auto text = two_bus_text();
    text.replace(text.find("2 1 "), 4, "2 3 ");
    try {
        (void)parse_case(text);
        FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("1, 2") != std::string::npos);
    }
}

TEST_CASE("semantic errors name the offending entity") {
    SUBCASE("duplicate bus id") {
        auto text = two_bus_text();
        text.replace(text.find("  2 1 "), 6, "  1 1 ");
        CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("duplicate bus id 1"), ValidationError);
    }
    SUBCASE("missing slack") {
        auto text = two_bus_text();
        text.replace(text.find("1 3 0"), 5, "1 2 0");
        CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("no slack"), ValidationError);
    }
    SUBCASE("dangling branch endpoint") {
        auto text = two_bus_text();
        text.replace(text.find("  1 2 0 0.1"), 11, "  1 7 0 0.1");
        CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("(1-7)"), ValidationError);
    }
}

TEST_CASE("syntax errors carry the line number") {
    auto text = two_bus_text();
    text.replace(text.find("230 1 1.1 0.9;\n  2"), 3, "2x0");
    try {
        (void)parse_case(text);
        FAIL("expected a ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 4);
        CHECK(std::string(e.what()).find("2x0") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_case("mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0 1 1 1 1;\n"), ParseError);
}

TEST_CASE("unknown sections and cell arrays are skipped") {
    auto text = two_bus_text();
    text += "mpc.gencost = [\n 2 0 0 3 0.01 40 0;\n];\nmpc.bus_name = {\n 'One';\n 'Two';\n};\n";
    CHECK(parse_case(text).bus_count() == 2);
}

TEST_CASE("parse -> serialize -> parse is the identity") {
    for (const auto* c : {&case14(), &case118()}) {
        const auto again = parse_case(serialize_case(*c), c->name());
        CHECK(again == *c);
    }
}

TEST_CASE("ybus of a single lossless line") {
    const auto y = build_ybus(parse_case(two_bus_text()));
    const MatrixX<Complex> dense = y.ybus.toDense();
    CHECK(dense(0, 1).real() == doctest::Approx(0.0));
    CHECK(dense(0, 1).imag() == doctest::Approx(10.0));
    CHECK(dense(0, 0).imag() == doctest::Approx(-10.0));
    CHECK(dense(1, 1).imag() == doctest::Approx(-10.0));
}

TEST_CASE("ybus is symmetric without taps or phase shifters") {
    CHECK(max_asymmetry(build_ybus(parse_case(gridshield::testing::three_bus_text()))) < 1e-12);
    // IEEE 118 has off-nominal taps but no phase shifters; taps keep Y symmetric.
    CHECK(max_asymmetry(build_ybus(case118())) < 1e-12);
}

TEST_CASE("IEEE 14 ybus matches a direct branch-list summation") {
    const auto& c = case14();
    const auto y = build_ybus(c);
    const MatrixX<Complex> got = y.ybus.toDense();

    // Independent stamp of each pi-model, written out longhand.
    const auto m = static_cast<Eigen::Index>(c.bus_count());
    MatrixX<Complex> ref = MatrixX<Complex>::Zero(m, m);
    for (const auto& br : c.branches()) {
        const auto f = static_cast<Eigen::Index>(c.bus_position(br.from_bus));
        const auto t = static_cast<Eigen::Index>(c.bus_position(br.to_bus));
        const double denom = br.r * br.r + br.x * br.x;
        const Complex series(br.r / denom, -br.x / denom);
        const Complex half_b(0.0, br.b_charging / 2.0);
        const double a = br.tap_ratio;
        ref(f, f) += (series + half_b) / (a * a);
        ref(t, t) += series + half_b;
        ref(f, t) -= series / a;
        ref(t, f) -= series / a;
    }
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto& bus = c.buses()[static_cast<std::size_t>(k)];
        ref(k, k) += Complex(bus.shunt_g, bus.shunt_b);
    }
    CHECK((got - ref).cwiseAbs().maxCoeff() < 1e-9);

    // Frozen entries from an external MATPOWER-compatible tool.
    CHECK(std::abs(got(0, 0) - Complex(6.025029055768224, -19.447070205514382)) < 1e-9);
    CHECK(std::abs(got(3, 6) - Complex(0.0, 4.889512660317341)) < 1e-9);
    CHECK(std::abs(got(8, 8) - Complex(5.326055039467359, -24.092506375267877)) < 1e-9);
}

TEST_CASE("schema ordering and counts") {
    SUBCASE("two-bus, from-end flows") {
        const auto s = build_schema(parse_case(two_bus_text()));
        REQUIRE(s.size() == 8);
        CHECK(s[0].kind == MeasurementKind::Vmag);
        CHECK(s[2].kind == MeasurementKind::Pinj);
        CHECK(s[4].kind == MeasurementKind::Qinj);
        CHECK(s[6].kind == MeasurementKind::Pflow);
        CHECK(s[7].kind == MeasurementKind::Qflow);
    }
    SUBCASE("two-bus, both ends metered") {
        MeteringPlan plan;
        plan.flows_at_both_ends = true;
        const auto s = build_schema(parse_case(two_bus_text()), plan);
        CHECK(s.size() == 10);
        CHECK(s[6].from == 1);
        CHECK(s[7].from == 2);
    }
    SUBCASE("IEEE 118 default plan") {
        const auto s = build_schema(case118());
        CHECK(s.size() == 712);
        CHECK(s.zero_injection_indices().size() == 21);
        CHECK(s.regular_indices().size() == 691);
    }
}

TEST_CASE("schema is a pure function of case and plan") {
    const auto a = build_schema(case118());
    const auto b = build_schema(case118());
    CHECK(a == b);
    CHECK(MeasurementSchema::from_json(a.to_json()) == a);
    for (std::size_t i = 1; i < a.size(); ++i) {
        const auto& p = a[i - 1];
        const auto& q = a[i];
        if (p.kind == q.kind) {
            if (is_flow(p.kind)) {
                CHECK(std::make_pair(p.from, p.to) < std::make_pair(q.from, q.to));
            } else {
                CHECK(p.bus < q.bus);
            }
        } else {
            CHECK(static_cast<int>(p.kind) < static_cast<int>(q.kind));
        }
    }
}

TEST_CASE("every zero-injection entry has zero load and no generator") {
    const auto& c = case118();
    const auto s = build_schema(c);
    for (const auto i : s.zero_injection_indices()) {
        const auto pos = c.bus_position(s[i].bus);
        const auto& bus = c.buses()[pos];
        CHECK_FALSE(c.has_generator(pos));
        CHECK((s[i].kind == MeasurementKind::Pinj ? bus.load_p : bus.load_q) == 0.0);
    }
}

TEST_CASE("plan referencing unknown entities is rejected") {
    const auto c = parse_case(two_bus_text());
    MeteringPlan bad_bus;
    bad_bus.vmag_buses = std::vector<int>{1, 9};
    CHECK_THROWS_AS(build_schema(c, bad_bus), ValidationError);
    MeteringPlan bad_branch;
    bad_branch.flow_pairs = std::vector<std::pair<int, int>>{{2, 3}};
    CHECK_THROWS_AS(build_schema(c, bad_branch), ValidationError);

    MeteringPlan partial;
    partial.flow_pairs = std::vector<std::pair<int, int>>{};
    partial.injection_buses = std::vector<int>{2};
    CHECK(build_schema(c, partial).size() == 4);
    CHECK(MeteringPlan::from_json(partial.to_json()).injection_buses == partial.injection_buses);
}
