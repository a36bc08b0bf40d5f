#include "gridshield/measurement.hpp"

namespace gridshield {

StateVector StateVector::flat(std::size_t bus_count) {
    StateVector s;
    s.angles = Vector::Zero(static_cast<Eigen::Index>(bus_count - 1));
    s.vmags = Vector::Ones(static_cast<Eigen::Index>(bus_count));
    return s;
}

StateVector StateVector::unpack(const Eigen::Ref<const Vector>& x, std::size_t bus_count) {
    const auto m = static_cast<Eigen::Index>(bus_count);
    if (x.size() != 2 * m - 1) {
        throw ValidationError("packed state has " + std::to_string(x.size()) + " entries, expected " +
                              std::to_string(2 * m - 1));
    }
    StateVector s;
    s.angles = x.head(m - 1);
    s.vmags = x.tail(m);
    return s;
}

Vector StateVector::packed() const {
    Vector x(angles.size() + vmags.size());
    x << angles, vmags;
    return x;
}

Vector StateVector::bus_angles(std::size_t slack) const {
    const auto m = vmags.size();
    Vector full(m);
    Eigen::Index src = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
        full(k) = static_cast<std::size_t>(k) == slack ? 0.0 : angles(src++);
    }
    return full;
}

MeasurementFunction::MeasurementFunction(const NetworkCase& network, MeasurementSchema schema)
    : schema_(std::move(schema)),
      ybus_(build_ybus(network)),
      bus_count_(network.bus_count()),
      slack_(network.slack_position()) {
    meters_.reserve(schema_.size());
    for (const auto& def : schema_) {
        Meter mt{def.kind, 0, 0, {}, {}};
        if (is_flow(def.kind)) {
            mt.a = network.bus_position(def.from);
            mt.b = network.bus_position(def.to);
            bool found = false;
            for (const auto& br : ybus_.branches) {
                if (!br.in_service) {
                    continue;
                }
                if (br.from == mt.a && br.to == mt.b) {
                    mt.y_self += br.yff;
                    mt.y_mutual += br.yft;
                    found = true;
                } else if (br.to == mt.a && br.from == mt.b) {
                    mt.y_self += br.ytt;
                    mt.y_mutual += br.ytf;
                    found = true;
                }
            }
            if (!found) {
                throw ValidationError("flow meter " + std::to_string(def.from) + "-" + std::to_string(def.to) +
                                      " has no in-service branch");
            }
        } else {
            mt.a = network.bus_position(def.bus);
        }
        meters_.push_back(mt);
    }
}

SparseMatrix MeasurementFunction::jacobian(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != state_size()) {
        throw ValidationError("state has " + std::to_string(x.size()) + " entries, expected " +
                              std::to_string(state_size()));
    }
    Vector theta;
    Vector vm;
    expand<double>(x, theta, vm);
    Vector p_inj;
    Vector q_inj;
    bus_injections(x, p_inj, q_inj);

    std::vector<Triplet> triplets;
    triplets.reserve(meters_.size() * 8);
    const auto add_theta = [&](Eigen::Index row, std::size_t bus, double v) {
        const auto col = angle_column(bus);
        if (col >= 0) {
            triplets.emplace_back(row, col, v);
        }
    };
    const auto add_v = [&](Eigen::Index row, std::size_t bus, double v) {
        triplets.emplace_back(row, vmag_column(bus), v);
    };

    for (std::size_t k = 0; k < meters_.size(); ++k) {
        const auto& mt = meters_[k];
        const auto row = static_cast<Eigen::Index>(k);
        const auto a = static_cast<Eigen::Index>(mt.a);
        switch (mt.kind) {
            case MeasurementKind::Vmag:
                add_v(row, mt.a, 1.0);
                break;
            case MeasurementKind::Pinj:
            case MeasurementKind::Qinj: {
                const bool active = mt.kind == MeasurementKind::Pinj;
                double g_ii = 0.0;
                double b_ii = 0.0;
                for (ComplexSparseRowMatrix::InnerIterator it(ybus_.ybus, a); it; ++it) {
                    const auto j = it.col();
                    if (j == a) {
                        g_ii += it.value().real();
                        b_ii += it.value().imag();
                        continue;
                    }
                    const double g = it.value().real();
                    const double b = it.value().imag();
                    const double dt = theta(a) - theta(j);
                    const double c = std::cos(dt);
                    const double s = std::sin(dt);
                    const auto jb = static_cast<std::size_t>(j);
                    if (active) {
                        add_theta(row, jb, vm(a) * vm(j) * (g * s - b * c));
                        add_v(row, jb, vm(a) * (g * c + b * s));
                    } else {
                        add_theta(row, jb, -vm(a) * vm(j) * (g * c + b * s));
                        add_v(row, jb, vm(a) * (g * s - b * c));
                    }
                }
                const double va = vm(a);
                if (active) {
                    add_theta(row, mt.a, -q_inj(a) - b_ii * va * va);
                    add_v(row, mt.a, p_inj(a) / va + g_ii * va);
                } else {
                    add_theta(row, mt.a, p_inj(a) - g_ii * va * va);
                    add_v(row, mt.a, q_inj(a) / va - b_ii * va);
                }
                break;
            }
            case MeasurementKind::Pflow:
            case MeasurementKind::Qflow: {
                const auto b = static_cast<Eigen::Index>(mt.b);
                const double dt = theta(a) - theta(b);
                const double c = std::cos(dt);
                const double s = std::sin(dt);
                const double va = vm(a);
                const double vb = vm(b);
                const double g = mt.y_mutual.real();
                const double bm = mt.y_mutual.imag();
                if (mt.kind == MeasurementKind::Pflow) {
                    const double d_theta = va * vb * (-g * s + bm * c);
                    add_theta(row, mt.a, d_theta);
                    add_theta(row, mt.b, -d_theta);
                    add_v(row, mt.a, 2.0 * va * mt.y_self.real() + vb * (g * c + bm * s));
                    add_v(row, mt.b, va * (g * c + bm * s));
                } else {
                    const double d_theta = va * vb * (g * c + bm * s);
                    add_theta(row, mt.a, d_theta);
                    add_theta(row, mt.b, -d_theta);
                    add_v(row, mt.a, -2.0 * va * mt.y_self.imag() + vb * (g * s - bm * c));
                    add_v(row, mt.b, va * (g * s - bm * c));
                }
                break;
            }
        }
    }
    SparseMatrix h(static_cast<Eigen::Index>(meters_.size()), static_cast<Eigen::Index>(state_size()));
    h.setFromTriplets(triplets.begin(), triplets.end());
    return h;
}

}  // namespace gridshield
