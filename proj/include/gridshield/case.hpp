#pragma once

#include "gridshield/types.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gridshield {

enum class BusKind { PQ = 1, PV = 2, Slack = 3 };

/// One network bus. Power quantities are per-unit on the case MVA base.
struct Bus {
    int id = 0;
    BusKind kind = BusKind::PQ;
    double load_p = 0.0;
    double load_q = 0.0;
    double shunt_g = 0.0;
    double shunt_b = 0.0;
    int area = 1;
    double vm_init = 1.0;   // case-file voltage magnitude, pu
    double va_init = 0.0;   // case-file voltage angle, radians
    double base_kv = 0.0;   // 0 means "not given" (MATPOWER convention)
    int zone = 1;
    double vmax = 1.1;
    double vmin = 0.9;
    double v_setpoint = 1.0;  // generator setpoint for PV/slack buses, else vm_init

    bool operator==(const Bus&) const = default;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b_charging = 0.0;
    double rate_a = 0.0;  // MVA, carried through for round-tripping
    double tap_ratio = 1.0;
    double phase_shift = 0.0;  // radians
    bool in_service = true;

    bool operator==(const Branch&) const = default;
};

struct Generator {
    int bus = 0;
    double p_gen = 0.0;  // pu
    double q_gen = 0.0;  // pu, case-file value
    double q_max = 0.0;  // pu
    double q_min = 0.0;  // pu
    double v_setpoint = 1.0;
    double mva_base = 100.0;
    bool in_service = true;
    double p_max = 0.0;  // pu
    double p_min = 0.0;  // pu

    bool operator==(const Generator&) const = default;
};

/// A validated power network. Buses keep file order; `bus_position` maps an
/// external bus id to its 0-based position in `buses`.
class NetworkCase {
public:
    NetworkCase() = default;
    NetworkCase(std::string name, double mva_base, std::vector<Bus> buses,
                std::vector<Branch> branches, std::vector<Generator> generators);

    const std::string& name() const noexcept { return name_; }
    double mva_base() const noexcept { return mva_base_; }
    const std::vector<Bus>& buses() const noexcept { return buses_; }
    const std::vector<Branch>& branches() const noexcept { return branches_; }
    const std::vector<Generator>& generators() const noexcept { return generators_; }

    std::size_t bus_count() const noexcept { return buses_.size(); }
    std::size_t slack_position() const noexcept { return slack_position_; }

    /// Position of `bus_id` in `buses()`, or nullopt when absent.
    std::optional<std::size_t> find_bus(int bus_id) const;
    /// Position of `bus_id`; throws ValidationError when absent.
    std::size_t bus_position(int bus_id) const;

    /// True when at least one in-service generator sits at the bus position.
    bool has_generator(std::size_t position) const { return has_generator_[position]; }

    /// Scheduled generation per bus position (sum over in-service units), pu.
    Vector scheduled_p_gen() const;

    bool operator==(const NetworkCase& other) const;

private:
    void validate_and_index();

    std::string name_;
    double mva_base_ = 100.0;
    std::vector<Bus> buses_;
    std::vector<Branch> branches_;
    std::vector<Generator> generators_;
    std::vector<std::pair<int, std::size_t>> id_index_;  // sorted by id
    std::vector<bool> has_generator_;
    std::size_t slack_position_ = 0;
};

/// Parses the line-oriented MATPOWER subset (`mpc.baseMVA`, `mpc.bus`, `mpc.gen`,
/// `mpc.branch`); other matrices and cell arrays are skipped. Throws ParseError on
/// syntax problems and ValidationError on semantic ones.
NetworkCase parse_case(std::string_view text, std::string name = "case");

/// Reads and parses a case file; the case name defaults to the file stem.
NetworkCase load_case(const std::string& path);

/// Writes the case back in the same MATPOWER subset. parse_case(serialize_case(c))
/// reproduces `c` exactly.
std::string serialize_case(const NetworkCase& network);

}  // namespace gridshield
