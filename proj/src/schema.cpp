#include "gridshield/schema.hpp"

#include <algorithm>
#include <set>

namespace gridshield {

std::string to_string(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::Vmag: return "Vmag";
        case MeasurementKind::Pinj: return "Pinj";
        case MeasurementKind::Qinj: return "Qinj";
        case MeasurementKind::Pflow: return "Pflow";
        case MeasurementKind::Qflow: return "Qflow";
    }
    return "?";
}

MeasurementKind measurement_kind_from_string(const std::string& s) {
    for (const auto k : {MeasurementKind::Vmag, MeasurementKind::Pinj, MeasurementKind::Qinj,
                         MeasurementKind::Pflow, MeasurementKind::Qflow}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw ValidationError("unknown measurement kind '" + s + "'");
}

MeteringPlan MeteringPlan::from_json(const nlohmann::json& j) {
    MeteringPlan plan;
    const auto bus_list = [&j](const char* key) -> std::optional<std::vector<int>> {
        if (!j.contains(key) || (j[key].is_string() && j[key] == "all")) {
            return std::nullopt;
        }
        return j[key].get<std::vector<int>>();
    };
    plan.vmag_buses = bus_list("vmag");
    plan.injection_buses = bus_list("injections");
    if (j.contains("flows") && !(j["flows"].is_string() && j["flows"] == "all")) {
        std::vector<std::pair<int, int>> pairs;
        for (const auto& p : j["flows"]) {
            pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
        }
        plan.flow_pairs = std::move(pairs);
    }
    plan.flows_at_both_ends = j.value("flows_at_both_ends", false);
    return plan;
}

nlohmann::json MeteringPlan::to_json() const {
    nlohmann::json j;
    j["vmag"] = vmag_buses ? nlohmann::json(*vmag_buses) : nlohmann::json("all");
    j["injections"] = injection_buses ? nlohmann::json(*injection_buses) : nlohmann::json("all");
    if (flow_pairs) {
        auto arr = nlohmann::json::array();
        for (const auto& [f, t] : *flow_pairs) {
            arr.push_back({f, t});
        }
        j["flows"] = arr;
    } else {
        j["flows"] = "all";
    }
    j["flows_at_both_ends"] = flows_at_both_ends;
    return j;
}

MeasurementSchema::MeasurementSchema(std::vector<MeasurementDef> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].index != i) {
            throw ValidationError("measurement schema indices must be 0..d-1 without gaps");
        }
        if (entries_[i].zero_injection && !is_injection(entries_[i].kind)) {
            throw ValidationError("only injection measurements can be zero injections");
        }
    }
}

std::vector<std::size_t> MeasurementSchema::zero_injection_indices() const {
    std::vector<std::size_t> out;
    for (const auto& e : entries_) {
        if (e.zero_injection) {
            out.push_back(e.index);
        }
    }
    return out;
}

std::vector<std::size_t> MeasurementSchema::regular_indices() const {
    std::vector<std::size_t> out;
    for (const auto& e : entries_) {
        if (!e.zero_injection) {
            out.push_back(e.index);
        }
    }
    return out;
}

nlohmann::json MeasurementSchema::to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& e : entries_) {
        nlohmann::json j;
        j["index"] = e.index;
        j["kind"] = to_string(e.kind);
        if (is_flow(e.kind)) {
            j["from"] = e.from;
            j["to"] = e.to;
        } else {
            j["bus"] = e.bus;
        }
        j["zero_injection"] = e.zero_injection;
        arr.push_back(std::move(j));
    }
    return arr;
}

MeasurementSchema MeasurementSchema::from_json(const nlohmann::json& j) {
    std::vector<MeasurementDef> entries;
    entries.reserve(j.size());
    for (const auto& item : j) {
        MeasurementDef e;
        e.index = item.at("index").get<std::size_t>();
        e.kind = measurement_kind_from_string(item.at("kind").get<std::string>());
        if (is_flow(e.kind)) {
            e.from = item.at("from").get<int>();
            e.to = item.at("to").get<int>();
        } else {
            e.bus = item.at("bus").get<int>();
        }
        e.zero_injection = item.value("zero_injection", false);
        entries.push_back(e);
    }
    return MeasurementSchema(std::move(entries));
}

MeasurementSchema build_schema(const NetworkCase& network, const MeteringPlan& plan) {
    const auto all_ids = [&network] {
        std::vector<int> ids;
        for (const auto& b : network.buses()) {
            ids.push_back(b.id);
        }
        return ids;
    };
    const auto checked_ids = [&](const std::optional<std::vector<int>>& requested, const char* what) {
        std::vector<int> ids = requested ? *requested : all_ids();
        for (const int id : ids) {
            if (!network.find_bus(id)) {
                throw ValidationError(std::string("metering plan ") + what + " references unknown bus " +
                                      std::to_string(id));
            }
        }
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        return ids;
    };

    // In-service connected pairs, oriented as the first circuit in file order.
    std::vector<std::pair<int, int>> connected;
    std::set<std::pair<int, int>> seen;
    for (const auto& br : network.branches()) {
        if (!br.in_service) {
            continue;
        }
        const auto key = std::minmax(br.from_bus, br.to_bus);
        if (seen.insert(key).second) {
            connected.emplace_back(br.from_bus, br.to_bus);
        }
    }

    std::vector<std::pair<int, int>> pairs;
    if (plan.flow_pairs) {
        for (const auto& p : *plan.flow_pairs) {
            if (!seen.contains(std::minmax(p.first, p.second))) {
                throw ValidationError("metering plan references unknown branch " + std::to_string(p.first) + "-" +
                                      std::to_string(p.second));
            }
            pairs.push_back(p);
        }
    } else {
        pairs = connected;
    }
    if (plan.flows_at_both_ends) {
        const auto n = pairs.size();
        for (std::size_t k = 0; k < n; ++k) {
            pairs.emplace_back(pairs[k].second, pairs[k].first);
        }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    const auto vmag_ids = checked_ids(plan.vmag_buses, "vmag list");
    const auto inj_ids = checked_ids(plan.injection_buses, "injection list");

    std::vector<MeasurementDef> entries;
    const auto push = [&entries](MeasurementDef e) {
        e.index = entries.size();
        entries.push_back(e);
    };
    for (const int id : vmag_ids) {
        push({MeasurementKind::Vmag, id, 0, 0, 0, false});
    }
    for (const auto kind : {MeasurementKind::Pinj, MeasurementKind::Qinj}) {
        for (const int id : inj_ids) {
            const auto pos = network.bus_position(id);
            const auto& bus = network.buses()[pos];
            const double load = kind == MeasurementKind::Pinj ? bus.load_p : bus.load_q;
            const bool zero = !network.has_generator(pos) && load == 0.0;
            push({kind, id, 0, 0, 0, zero});
        }
    }
    for (const auto kind : {MeasurementKind::Pflow, MeasurementKind::Qflow}) {
        for (const auto& [f, t] : pairs) {
            push({kind, 0, f, t, 0, false});
        }
    }
    return MeasurementSchema(std::move(entries));
}

}  // namespace gridshield
