#pragma once

#include "gridshield/case.hpp"
#include "gridshield/measurement.hpp"

#include <random>
#include <string>

namespace gridshield::testing {

inline std::string data_path(const std::string& file) { return std::string(GRIDSHIELD_DATA_DIR) + "/" + file; }

inline const NetworkCase& case14() {
    static const NetworkCase c = load_case(data_path("case14.m"));
    return c;
}

inline const NetworkCase& case118() {
    static const NetworkCase c = load_case(data_path("case118.m"));
    return c;
}

/// Slack + PQ joined by a lossless x = 0.1 line; `load_mw` at bus 2.
inline std::string two_bus_text(double load_mw = 0.0, double load_mvar = 0.0) {
    return "function mpc = two_bus\n"
           "mpc.baseMVA = 100;\n"
           "mpc.bus = [\n"
           "  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n"
           "  2 1 " + std::to_string(load_mw) + " " + std::to_string(load_mvar) + " 0 0 1 1 0 230 1 1.1 0.9;\n"
           "];\n"
           "mpc.gen = [\n"
           "  1 0 0 300 -300 1.0 100 1 250 10;\n"
           "];\n"
           "mpc.branch = [\n"
           "  1 2 0 0.1 0 250 250 250 0 0 1 -360 360;\n"
           "];\n";
}

/// Slack, PV and PQ bus in a lossy triangle with line charging.
inline std::string three_bus_text() {
    return "function mpc = three_bus\n"
           "mpc.baseMVA = 100;\n"
           "mpc.bus = [\n"
           "  1 3 0 0 0 0 1 1.02 0 138 1 1.1 0.9;\n"
           "  2 2 20 10 0 0 1 1.01 0 138 1 1.1 0.9;\n"
           "  3 1 80 30 0 5 1 1 0 138 1 1.1 0.9;\n"
           "];\n"
           "mpc.gen = [\n"
           "  1 0 0 300 -300 1.02 100 1 250 0;\n"
           "  2 40 0 100 -100 1.01 100 1 100 0;\n"
           "];\n"
           "mpc.branch = [\n"
           "  1 2 0.02 0.06 0.03 0 0 0 0 0 1 -360 360;\n"
           "  1 3 0.08 0.24 0.025 0 0 0 0 0 1 -360 360;\n"
           "  2 3 0.06 0.18 0.02 0 0 0 0 0 1 -360 360;\n"
           "];\n";
}

/// A state near nominal: angles within +-0.3 rad, magnitudes within [0.9, 1.1].
inline StateVector random_state(std::size_t bus_count, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> angle(-0.3, 0.3);
    std::uniform_real_distribution<double> mag(0.9, 1.1);
    StateVector s = StateVector::flat(bus_count);
    for (Eigen::Index k = 0; k < s.angles.size(); ++k) {
        s.angles(k) = angle(rng);
    }
    for (Eigen::Index k = 0; k < s.vmags.size(); ++k) {
        s.vmags(k) = mag(rng);
    }
    return s;
}

/// Central finite differences of h, column by column.
inline Matrix finite_difference_jacobian(const MeasurementFunction& f, const Vector& x, double step = 1e-6) {
    Matrix out(static_cast<Eigen::Index>(f.size()), x.size());
    for (Eigen::Index c = 0; c < x.size(); ++c) {
        Vector up = x;
        Vector down = x;
        up(c) += step;
        down(c) -= step;
        out.col(c) = (f.evaluate(up) - f.evaluate(down)) / (2.0 * step);
    }
    return out;
}

}  // namespace gridshield::testing
