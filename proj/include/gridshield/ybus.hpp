#pragma once

#include "gridshield/case.hpp"
#include "gridshield/types.hpp"

#include <vector>

namespace gridshield {

/// Two-port pi-model admittances of one branch, oriented from -> to.
/// Injected currents are I_f = yff*V_f + yft*V_t and I_t = ytf*V_f + ytt*V_t.
struct BranchAdmittance {
    std::size_t from = 0;  // bus position
    std::size_t to = 0;    // bus position
    Complex yff;
    Complex yft;
    Complex ytf;
    Complex ytt;
    bool in_service = true;
};

struct AdmittanceMatrix {
    ComplexSparseRowMatrix ybus;  // M x M
    std::vector<BranchAdmittance> branches;  // same order as NetworkCase::branches()

    Eigen::Index size() const { return ybus.rows(); }
};

/// Standard bus admittance assembly: series impedance, line charging, off-nominal
/// taps, phase shifters, and bus shunts. Out-of-service branches contribute nothing.
AdmittanceMatrix build_ybus(const NetworkCase& network);

/// Largest |Y_ij - Y_ji| over all entries.
double max_asymmetry(const AdmittanceMatrix& y);

}  // namespace gridshield
