#pragma once

#include "gridshield/case.hpp"
#include "gridshield/measurement.hpp"

#include <vector>

namespace gridshield {

/// Per-bus demand in pu, indexed by bus position.
struct LoadVector {
    Vector p;
    Vector q;

    bool operator==(const LoadVector& o) const { return p == o.p && q == o.q; }
};

LoadVector base_loads(const NetworkCase& network);

struct PowerFlowOptions {
    double tolerance = 1e-8;  // infinity norm of the mismatch, pu
    int max_iterations = 20;
    bool enforce_q_limits = false;  // PV -> PQ switching on generator Q limits
};

struct PowerFlowResult {
    StateVector state;
    int iterations = 0;
    double mismatch = 0.0;
    std::vector<int> switched_to_pq;  // bus ids, only with enforce_q_limits
};

/// Newton-Raphson AC power flow in polar coordinates with full Jacobian
/// re-evaluation each iteration. The slack angle is the zero reference.
class PowerFlowSolver {
public:
    explicit PowerFlowSolver(const NetworkCase& network);

    PowerFlowResult solve(const LoadVector& loads, const PowerFlowOptions& options = {}) const;

    /// Net injections (generation minus load) implied by `state`, pu, per bus.
    void injections(const StateVector& state, Vector& p, Vector& q) const;

private:
    PowerFlowResult solve_with_kinds(const LoadVector& loads, const PowerFlowOptions& options,
                                     const std::vector<BusKind>& kinds, const Vector& q_spec_pq,
                                     const StateVector& start) const;

    NetworkCase network_;
    MeasurementFunction injection_model_;
    Vector p_gen_;
};

PowerFlowResult solve_powerflow(const NetworkCase& network, const LoadVector& loads,
                                const PowerFlowOptions& options = {});

}  // namespace gridshield
