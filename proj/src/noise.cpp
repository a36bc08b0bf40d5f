#include "gridshield/noise.hpp"

#include <map>
#include <set>

namespace gridshield {

void NoiseModel::validate() const {
    if (!(relative >= 0.0) || !std::isfinite(relative)) {
        throw ValidationError("noise relative std must be finite and >= 0");
    }
    if (!(floor > 0.0) || !std::isfinite(floor)) {
        throw ValidationError("noise floor must be finite and > 0");
    }
}

nlohmann::json NoiseModel::to_json() const { return {{"relative", relative}, {"floor", floor}}; }

NoiseModel NoiseModel::from_json(const nlohmann::json& j) {
    NoiseModel n;
    n.relative = j.value("relative", n.relative);
    n.floor = j.value("floor", n.floor);
    n.validate();
    return n;
}

SigmaModel::SigmaModel(const NetworkCase& network, const MeasurementSchema& schema, NoiseModel noise)
    : noise_(noise), zero_injection_(schema.size(), false), sources_(schema.size()) {
    noise_.validate();
    std::map<std::tuple<MeasurementKind, int, int>, long> flow_meter;
    for (const auto& e : schema) {
        if (is_flow(e.kind)) {
            flow_meter.emplace(std::make_tuple(e.kind, e.from, e.to), static_cast<long>(e.index));
        }
    }
    std::map<int, std::set<int>> neighbours;
    for (const auto& br : network.branches()) {
        if (br.in_service) {
            neighbours[br.from_bus].insert(br.to_bus);
            neighbours[br.to_bus].insert(br.from_bus);
        }
    }
    for (const auto& e : schema) {
        if (!e.zero_injection) {
            continue;
        }
        zero_injection_[e.index] = true;
        const auto flow_kind = e.kind == MeasurementKind::Pinj ? MeasurementKind::Pflow : MeasurementKind::Qflow;
        for (const int j : neighbours[e.bus]) {
            long source = -1;
            if (const auto it = flow_meter.find({flow_kind, e.bus, j}); it != flow_meter.end()) {
                source = it->second;
            } else if (const auto back = flow_meter.find({flow_kind, j, e.bus}); back != flow_meter.end()) {
                source = back->second;
            }
            sources_[e.index].push_back(source);
        }
    }
}

Vector SigmaModel::operator()(const Vector& values) const {
    if (static_cast<std::size_t>(values.size()) != sources_.size()) {
        throw ValidationError("value vector length does not match the schema");
    }
    Vector out(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (!zero_injection_[k]) {
            out(i) = noise_.sigma(values(i));
            continue;
        }
        double sum = 0.0;
        for (const long s : sources_[k]) {
            const double sd = s < 0 ? noise_.floor : noise_.sigma(values(s));
            sum += sd * sd;
        }
        out(i) = sources_[k].empty() ? noise_.floor : std::sqrt(sum);
    }
    return out;
}

}  // namespace gridshield
