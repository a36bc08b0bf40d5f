#pragma once

#include "gridshield/case.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gridshield {

enum class MeasurementKind { Vmag, Pinj, Qinj, Pflow, Qflow };

std::string to_string(MeasurementKind kind);
MeasurementKind measurement_kind_from_string(const std::string& s);

inline bool is_flow(MeasurementKind k) { return k == MeasurementKind::Pflow || k == MeasurementKind::Qflow; }
inline bool is_injection(MeasurementKind k) { return k == MeasurementKind::Pinj || k == MeasurementKind::Qinj; }

/// One meter. Bus kinds use `bus`; flow kinds use `from`/`to` and measure the
/// total flow leaving `from` towards `to` over every in-service circuit between them.
struct MeasurementDef {
    MeasurementKind kind = MeasurementKind::Vmag;
    int bus = 0;
    int from = 0;
    int to = 0;
    std::size_t index = 0;
    bool zero_injection = false;

    bool operator==(const MeasurementDef&) const = default;
};

/// Which meters exist. Unset lists mean "every bus" / "every connected bus pair".
struct MeteringPlan {
    std::optional<std::vector<int>> vmag_buses;
    std::optional<std::vector<int>> injection_buses;
    std::optional<std::vector<std::pair<int, int>>> flow_pairs;
    bool flows_at_both_ends = false;

    static MeteringPlan from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

class MeasurementSchema {
public:
    MeasurementSchema() = default;
    explicit MeasurementSchema(std::vector<MeasurementDef> entries);

    std::size_t size() const noexcept { return entries_.size(); }
    const MeasurementDef& operator[](std::size_t i) const { return entries_[i]; }
    const std::vector<MeasurementDef>& entries() const noexcept { return entries_; }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::vector<std::size_t> zero_injection_indices() const;
    /// Indices of every entry that is not a zero injection, ascending.
    std::vector<std::size_t> regular_indices() const;

    nlohmann::json to_json() const;
    static MeasurementSchema from_json(const nlohmann::json& j);

    bool operator==(const MeasurementSchema&) const = default;

private:
    std::vector<MeasurementDef> entries_;
};

/// Builds the ordered meter list: Vmag by bus id, then Pinj, Qinj, then Pflow,
/// Qflow by (from, to). Pinj (Qinj) is flagged as a zero injection when its bus
/// has no generator and zero active (reactive) load.
MeasurementSchema build_schema(const NetworkCase& network, const MeteringPlan& plan = {});

}  // namespace gridshield
