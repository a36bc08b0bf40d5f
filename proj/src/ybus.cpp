#include "gridshield/ybus.hpp"

#include <cmath>

namespace gridshield {

AdmittanceMatrix build_ybus(const NetworkCase& network) {
    const auto m = static_cast<Eigen::Index>(network.bus_count());
    AdmittanceMatrix out;
    out.branches.reserve(network.branches().size());

    std::vector<Eigen::Triplet<Complex>> entries;
    entries.reserve(network.branches().size() * 4 + network.bus_count());

    for (const auto& br : network.branches()) {
        BranchAdmittance a;
        a.from = network.bus_position(br.from_bus);
        a.to = network.bus_position(br.to_bus);
        a.in_service = br.in_service;
        if (br.in_service) {
            const Complex ys = 1.0 / Complex(br.r, br.x);
            const Complex charging(0.0, br.b_charging / 2.0);
            const Complex tap = std::polar(br.tap_ratio, br.phase_shift);
            a.ytt = ys + charging;
            a.yff = a.ytt / (br.tap_ratio * br.tap_ratio);
            a.yft = -ys / std::conj(tap);
            a.ytf = -ys / tap;

            const auto f = static_cast<Eigen::Index>(a.from);
            const auto t = static_cast<Eigen::Index>(a.to);
            entries.emplace_back(f, f, a.yff);
            entries.emplace_back(f, t, a.yft);
            entries.emplace_back(t, f, a.ytf);
            entries.emplace_back(t, t, a.ytt);
        }
        out.branches.push_back(a);
    }
    for (std::size_t k = 0; k < network.bus_count(); ++k) {
        const auto& bus = network.buses()[k];
        const auto i = static_cast<Eigen::Index>(k);
        // Diagonal always present so every row has its self term.
        entries.emplace_back(i, i, Complex(bus.shunt_g, bus.shunt_b));
    }

    out.ybus.resize(m, m);
    out.ybus.setFromTriplets(entries.begin(), entries.end());
    out.ybus.makeCompressed();
    return out;
}

double max_asymmetry(const AdmittanceMatrix& y) {
    const MatrixX<Complex> dense = y.ybus.toDense();
    return (dense - dense.transpose()).cwiseAbs().maxCoeff();
}

}  // namespace gridshield
