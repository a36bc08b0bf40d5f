#include "gridshield/powerflow.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <sstream>

namespace gridshield {

namespace {

MeasurementSchema injection_schema(const NetworkCase& network) {
    std::vector<MeasurementDef> entries;
    for (const auto kind : {MeasurementKind::Pinj, MeasurementKind::Qinj}) {
        for (const auto& bus : network.buses()) {
            entries.push_back({kind, bus.id, 0, 0, entries.size(), false});
        }
    }
    return MeasurementSchema(std::move(entries));
}

}  // namespace

LoadVector base_loads(const NetworkCase& network) {
    const auto m = static_cast<Eigen::Index>(network.bus_count());
    LoadVector loads{Vector(m), Vector(m)};
    for (Eigen::Index k = 0; k < m; ++k) {
        loads.p(k) = network.buses()[static_cast<std::size_t>(k)].load_p;
        loads.q(k) = network.buses()[static_cast<std::size_t>(k)].load_q;
    }
    return loads;
}

PowerFlowSolver::PowerFlowSolver(const NetworkCase& network)
    : network_(network),
      injection_model_(network, injection_schema(network)),
      p_gen_(network.scheduled_p_gen()) {}

void PowerFlowSolver::injections(const StateVector& state, Vector& p, Vector& q) const {
    injection_model_.bus_injections(state.packed(), p, q);
}

PowerFlowResult PowerFlowSolver::solve(const LoadVector& loads, const PowerFlowOptions& options) const {
    const auto m = network_.bus_count();
    if (static_cast<std::size_t>(loads.p.size()) != m || static_cast<std::size_t>(loads.q.size()) != m) {
        throw ValidationError("load vector length does not match the bus count");
    }
    if (!loads.p.allFinite() || !loads.q.allFinite()) {
        throw ValidationError("load vector contains non-finite values");
    }

    std::vector<BusKind> kinds;
    kinds.reserve(m);
    StateVector start = StateVector::flat(m);
    for (std::size_t k = 0; k < m; ++k) {
        const auto& bus = network_.buses()[k];
        kinds.push_back(bus.kind);
        if (bus.kind != BusKind::PQ) {
            start.vmags(static_cast<Eigen::Index>(k)) = bus.v_setpoint;
        }
    }
    Vector q_spec = -loads.q;
    PowerFlowResult result = solve_with_kinds(loads, options, kinds, q_spec, start);
    if (!options.enforce_q_limits) {
        return result;
    }

    // Reactive limits: switch violating PV buses to PQ at the violated limit.
    Vector q_min = Vector::Zero(static_cast<Eigen::Index>(m));
    Vector q_max = Vector::Zero(static_cast<Eigen::Index>(m));
    for (const auto& gen : network_.generators()) {
        if (gen.in_service) {
            const auto pos = static_cast<Eigen::Index>(network_.bus_position(gen.bus));
            q_min(pos) += gen.q_min;
            q_max(pos) += gen.q_max;
        }
    }
    const int total_iterations_cap = options.max_iterations * static_cast<int>(m);
    int total_iterations = result.iterations;
    for (std::size_t round = 0; round < m; ++round) {
        Vector p;
        Vector q;
        injections(result.state, p, q);
        bool switched = false;
        for (std::size_t k = 0; k < m; ++k) {
            if (kinds[k] != BusKind::PV) {
                continue;
            }
            const auto i = static_cast<Eigen::Index>(k);
            const double q_gen = q(i) + loads.q(i);
            if (q_gen > q_max(i) || q_gen < q_min(i)) {
                kinds[k] = BusKind::PQ;
                q_spec(i) = (q_gen > q_max(i) ? q_max(i) : q_min(i)) - loads.q(i);
                result.switched_to_pq.push_back(network_.buses()[k].id);
                switched = true;
            }
        }
        if (!switched) {
            break;
        }
        auto switched_ids = std::move(result.switched_to_pq);
        result = solve_with_kinds(loads, options, kinds, q_spec, result.state);
        result.switched_to_pq = std::move(switched_ids);
        total_iterations += result.iterations;
        if (total_iterations > total_iterations_cap) {
            break;
        }
    }
    result.iterations = total_iterations;
    return result;
}

PowerFlowResult PowerFlowSolver::solve_with_kinds(const LoadVector& loads, const PowerFlowOptions& options,
                                                  const std::vector<BusKind>& kinds, const Vector& q_spec_pq,
                                                  const StateVector& start) const {
    const auto m = network_.bus_count();
    // Unknown and equation numbering: angles of non-slack buses, then |V| of PQ buses.
    std::vector<Eigen::Index> theta_unknown(m, -1);
    std::vector<Eigen::Index> vm_unknown(m, -1);
    Eigen::Index n = 0;
    for (std::size_t k = 0; k < m; ++k) {
        if (kinds[k] != BusKind::Slack) {
            theta_unknown[k] = n++;
        }
    }
    for (std::size_t k = 0; k < m; ++k) {
        if (kinds[k] == BusKind::PQ) {
            vm_unknown[k] = n++;
        }
    }
    // Map model columns/rows (Pinj_k = row k, Qinj_k = row m + k) onto the reduced system.
    std::vector<Eigen::Index> col_map(injection_model_.state_size(), -1);
    std::vector<Eigen::Index> row_map(2 * m, -1);
    for (std::size_t k = 0; k < m; ++k) {
        if (const auto c = injection_model_.angle_column(k); c >= 0) {
            col_map[static_cast<std::size_t>(c)] = theta_unknown[k];
        }
        col_map[static_cast<std::size_t>(injection_model_.vmag_column(k))] = vm_unknown[k];
        row_map[k] = theta_unknown[k];
        row_map[m + k] = vm_unknown[k];
    }

    const Vector p_spec = p_gen_ - loads.p;
    Vector x = start.packed();
    Vector mismatch(n);
    Vector p;
    Vector q;
    const auto compute_mismatch = [&] {
        injection_model_.bus_injections(x, p, q);
        for (std::size_t k = 0; k < m; ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            if (theta_unknown[k] >= 0) {
                mismatch(theta_unknown[k]) = p(i) - p_spec(i);
            }
            if (vm_unknown[k] >= 0) {
                mismatch(vm_unknown[k]) = q(i) - q_spec_pq(i);
            }
        }
        return n == 0 ? 0.0 : mismatch.cwiseAbs().maxCoeff();
    };

    double norm = compute_mismatch();
    int iteration = 0;
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
    while (norm >= options.tolerance) {
        if (iteration >= options.max_iterations) {
            std::ostringstream os;
            os << "power flow did not converge after " << iteration << " iterations (mismatch " << norm << " pu)";
            throw ConvergenceError(os.str(), iteration, norm);
        }
        ++iteration;
        const SparseMatrix full = injection_model_.jacobian(x);
        std::vector<Triplet> reduced;
        reduced.reserve(static_cast<std::size_t>(full.nonZeros()));
        for (Eigen::Index c = 0; c < full.outerSize(); ++c) {
            const auto rc = col_map[static_cast<std::size_t>(c)];
            if (rc < 0) {
                continue;
            }
            for (SparseMatrix::InnerIterator it(full, c); it; ++it) {
                const auto rr = row_map[static_cast<std::size_t>(it.row())];
                if (rr >= 0) {
                    reduced.emplace_back(rr, rc, it.value());
                }
            }
        }
        SparseMatrix jac(n, n);
        jac.setFromTriplets(reduced.begin(), reduced.end());
        lu.compute(jac);
        if (lu.info() != Eigen::Success) {
            throw SingularMatrixError("singular power-flow Jacobian at iteration " + std::to_string(iteration),
                                      iteration);
        }
        const Vector dx = lu.solve(mismatch);
        if (!dx.allFinite()) {
            throw SingularMatrixError("singular power-flow Jacobian at iteration " + std::to_string(iteration),
                                      iteration);
        }
        for (std::size_t k = 0; k < m; ++k) {
            if (theta_unknown[k] >= 0) {
                x(injection_model_.angle_column(k)) -= dx(theta_unknown[k]);
            }
            if (vm_unknown[k] >= 0) {
                x(injection_model_.vmag_column(k)) -= dx(vm_unknown[k]);
            }
        }
        norm = compute_mismatch();
    }
    return PowerFlowResult{StateVector::unpack(x, m), iteration, norm, {}};
}

PowerFlowResult solve_powerflow(const NetworkCase& network, const LoadVector& loads, const PowerFlowOptions& options) {
    return PowerFlowSolver(network).solve(loads, options);
}

}  // namespace gridshield
