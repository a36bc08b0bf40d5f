#include "gridshield/case.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <queue>
#include <sstream>

namespace gridshield {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::string strip_comment(std::string_view line) {
    // '%' inside a quoted string (e.g. mpc.version = '2') never occurs in the
    // supported subset, so the first '%' always starts a comment.
    const auto pos = line.find('%');
    return std::string(pos == std::string_view::npos ? line : line.substr(0, pos));
}

double parse_number(std::string_view token, std::size_t line) {
    double value = 0.0;
    const auto* begin = token.data();
    const auto* end = token.data() + token.size();
    if (!token.empty() && token.front() == '+') {
        ++begin;
    }
    const auto result = std::from_chars(begin, end, value);
    if (result.ec != std::errc() || result.ptr != end) {
        throw ParseError(line, "expected a number, found '" + std::string(token) + "'");
    }
    return value;
}

std::vector<double> parse_row(std::string_view body, std::size_t line) {
    std::vector<double> row;
    std::size_t i = 0;
    while (i < body.size()) {
        while (i < body.size() && (body[i] == ' ' || body[i] == '\t' || body[i] == ',')) {
            ++i;
        }
        if (i >= body.size()) {
            break;
        }
        std::size_t j = i;
        while (j < body.size() && body[j] != ' ' && body[j] != '\t' && body[j] != ',') {
            ++j;
        }
        row.push_back(parse_number(body.substr(i, j - i), line));
        i = j;
    }
    return row;
}

struct RawMatrix {
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> lines;
    std::size_t header_line = 0;
    bool present = false;
};

int as_int(double v, std::size_t line, const char* what) {
    if (v != std::floor(v)) {
        throw ParseError(line, std::string(what) + " must be an integer");
    }
    return static_cast<int>(v);
}

void require_columns(const RawMatrix& m, std::size_t k, std::size_t min_cols, const char* section) {
    if (m.rows[k].size() < min_cols) {
        throw ParseError(m.lines[k], std::string(section) + " row has " +
                                         std::to_string(m.rows[k].size()) + " columns, expected at least " +
                                         std::to_string(min_cols));
    }
}

// Finds a decimal value c such that forward(c) == v exactly, starting from an
// approximate inverse. Used so that serialized per-unit values parse back
// bit-for-bit.
double exact_preimage(double v, double approx, const std::function<double(double)>& forward) {
    if (forward(approx) == v) {
        return approx;
    }
    double lo = approx;
    double hi = approx;
    for (int step = 0; step < 64; ++step) {
        lo = std::nextafter(lo, -INFINITY);
        hi = std::nextafter(hi, INFINITY);
        if (forward(lo) == v) {
            return lo;
        }
        if (forward(hi) == v) {
            return hi;
        }
    }
    return approx;
}

std::string format_exact(double v) {
    if (v == 0.0) {
        return "0";
    }
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        std::ostringstream os;
        os << static_cast<long long>(v);
        return os.str();
    }
    char buf[64];
    const auto result = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, result.ptr);
}

}  // namespace

NetworkCase::NetworkCase(std::string name, double mva_base, std::vector<Bus> buses,
                         std::vector<Branch> branches, std::vector<Generator> generators)
    : name_(std::move(name)),
      mva_base_(mva_base),
      buses_(std::move(buses)),
      branches_(std::move(branches)),
      generators_(std::move(generators)) {
    validate_and_index();
}

void NetworkCase::validate_and_index() {
    if (!(mva_base_ > 0.0)) {
        throw ValidationError("baseMVA must be positive");
    }
    if (buses_.empty()) {
        throw ValidationError("case has no buses");
    }
    id_index_.clear();
    id_index_.reserve(buses_.size());
    for (std::size_t k = 0; k < buses_.size(); ++k) {
        id_index_.emplace_back(buses_[k].id, k);
    }
    std::sort(id_index_.begin(), id_index_.end());
    for (std::size_t k = 1; k < id_index_.size(); ++k) {
        if (id_index_[k].first == id_index_[k - 1].first) {
            throw ValidationError("duplicate bus id " + std::to_string(id_index_[k].first));
        }
    }

    std::vector<int> slack_ids;
    for (std::size_t k = 0; k < buses_.size(); ++k) {
        const auto& bus = buses_[k];
        if (bus.base_kv < 0.0) {
            throw ValidationError("bus " + std::to_string(bus.id) + " has negative base kV");
        }
        if (bus.kind == BusKind::Slack) {
            slack_ids.push_back(bus.id);
            slack_position_ = k;
        }
    }
    if (slack_ids.empty()) {
        throw ValidationError("case has no slack bus");
    }
    if (slack_ids.size() > 1) {
        std::string ids;
        for (const int id : slack_ids) {
            ids += (ids.empty() ? "" : ", ") + std::to_string(id);
        }
        throw ValidationError("case has " + std::to_string(slack_ids.size()) + " slack buses: " + ids);
    }

    for (std::size_t k = 0; k < branches_.size(); ++k) {
        const auto& br = branches_[k];
        const std::string label = "branch " + std::to_string(k + 1) + " (" + std::to_string(br.from_bus) +
                                  "-" + std::to_string(br.to_bus) + ")";
        if (!find_bus(br.from_bus) || !find_bus(br.to_bus)) {
            throw ValidationError(label + " references a bus that does not exist");
        }
        if (br.from_bus == br.to_bus) {
            throw ValidationError(label + " connects a bus to itself");
        }
        if (br.in_service && br.x == 0.0) {
            throw ValidationError(label + " has zero series reactance");
        }
        if (!(br.tap_ratio > 0.0)) {
            throw ValidationError(label + " has a non-positive tap ratio");
        }
    }

    has_generator_.assign(buses_.size(), false);
    for (std::size_t k = 0; k < generators_.size(); ++k) {
        const auto& gen = generators_[k];
        const auto pos = find_bus(gen.bus);
        if (!pos) {
            throw ValidationError("generator " + std::to_string(k + 1) + " at missing bus " +
                                  std::to_string(gen.bus));
        }
        if (!gen.in_service) {
            continue;
        }
        if (buses_[*pos].kind == BusKind::PQ) {
            throw ValidationError("generator " + std::to_string(k + 1) + " sits at PQ bus " +
                                  std::to_string(gen.bus));
        }
        if (!has_generator_[*pos]) {
            buses_[*pos].v_setpoint = gen.v_setpoint;
        }
        has_generator_[*pos] = true;
    }
    for (std::size_t k = 0; k < buses_.size(); ++k) {
        if (!has_generator_[k]) {
            buses_[k].v_setpoint = buses_[k].vm_init;
            if (buses_[k].kind != BusKind::PQ) {
                throw ValidationError("bus " + std::to_string(buses_[k].id) +
                                      " is PV/slack but has no in-service generator");
            }
        }
    }

    // Connectivity over in-service branches.
    std::vector<std::vector<std::size_t>> adjacency(buses_.size());
    for (const auto& br : branches_) {
        if (!br.in_service) {
            continue;
        }
        const auto f = bus_position(br.from_bus);
        const auto t = bus_position(br.to_bus);
        adjacency[f].push_back(t);
        adjacency[t].push_back(f);
    }
    std::vector<bool> seen(buses_.size(), false);
    std::queue<std::size_t> frontier;
    frontier.push(slack_position_);
    seen[slack_position_] = true;
    std::size_t reached = 1;
    while (!frontier.empty()) {
        const auto k = frontier.front();
        frontier.pop();
        for (const auto n : adjacency[k]) {
            if (!seen[n]) {
                seen[n] = true;
                ++reached;
                frontier.push(n);
            }
        }
    }
    if (reached != buses_.size()) {
        for (std::size_t k = 0; k < buses_.size(); ++k) {
            if (!seen[k]) {
                throw ValidationError("network is not connected: bus " + std::to_string(buses_[k].id) +
                                      " is islanded");
            }
        }
    }
}

std::optional<std::size_t> NetworkCase::find_bus(int bus_id) const {
    const auto it = std::lower_bound(id_index_.begin(), id_index_.end(), std::make_pair(bus_id, std::size_t{0}));
    if (it == id_index_.end() || it->first != bus_id) {
        return std::nullopt;
    }
    return it->second;
}

std::size_t NetworkCase::bus_position(int bus_id) const {
    const auto pos = find_bus(bus_id);
    if (!pos) {
        throw ValidationError("unknown bus id " + std::to_string(bus_id));
    }
    return *pos;
}

Vector NetworkCase::scheduled_p_gen() const {
    Vector p = Vector::Zero(static_cast<Eigen::Index>(buses_.size()));
    for (const auto& gen : generators_) {
        if (gen.in_service) {
            p(static_cast<Eigen::Index>(bus_position(gen.bus))) += gen.p_gen;
        }
    }
    return p;
}

bool NetworkCase::operator==(const NetworkCase& other) const {
    return name_ == other.name_ && mva_base_ == other.mva_base_ && buses_ == other.buses_ &&
           branches_ == other.branches_ && generators_ == other.generators_;
}

NetworkCase parse_case(std::string_view text, std::string name) {
    std::optional<double> base_mva;
    RawMatrix bus_m;
    RawMatrix gen_m;
    RawMatrix branch_m;
    RawMatrix ignored;
    RawMatrix* current = nullptr;
    bool in_cell = false;

    // Appends ';'-separated rows to the open matrix and closes it on ']'.
    const auto feed_rows = [&current](const std::string& text_part, std::size_t line_no) {
        std::string body = text_part;
        bool closes = false;
        if (const auto close = body.find(']'); close != std::string::npos) {
            closes = true;
            const auto tail = trim(std::string_view(body).substr(close + 1));
            if (!tail.empty() && tail != ";") {
                throw ParseError(line_no, "unexpected text after ']'");
            }
            body.resize(close);
        }
        std::size_t start = 0;
        while (start <= body.size()) {
            const auto semi = body.find(';', start);
            const auto piece = trim(std::string_view(body).substr(
                start, semi == std::string::npos ? std::string::npos : semi - start));
            if (!piece.empty()) {
                current->rows.push_back(parse_row(piece, line_no));
                current->lines.push_back(line_no);
            }
            if (semi == std::string::npos) {
                break;
            }
            start = semi + 1;
        }
        if (closes) {
            current = nullptr;
        }
    };

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
        ++line_no;

        std::string line = trim(strip_comment(raw));
        if (line.empty()) {
            continue;
        }
        if (in_cell) {
            if (line.find('}') != std::string::npos) {
                in_cell = false;
            }
            continue;
        }
        if (current != nullptr) {
            feed_rows(line, line_no);
            continue;
        }

        if (line.rfind("function", 0) == 0) {
            continue;
        }
        const auto eq = line.find('=');
        if (line.rfind("mpc.", 0) != 0 || eq == std::string::npos) {
            throw ParseError(line_no, "expected 'mpc.<field> = ...', found '" + line + "'");
        }
        const std::string field = trim(std::string_view(line).substr(4, eq - 4));
        std::string rhs = trim(std::string_view(line).substr(eq + 1));

        if (!rhs.empty() && rhs.front() == '{') {
            in_cell = rhs.find('}') == std::string::npos;
            continue;
        }
        if (!rhs.empty() && rhs.front() == '[') {
            RawMatrix* target = &ignored;
            if (field == "bus") {
                target = &bus_m;
            } else if (field == "gen") {
                target = &gen_m;
            } else if (field == "branch") {
                target = &branch_m;
            } else {
                ignored = RawMatrix{};
            }
            if (target->present) {
                throw ParseError(line_no, "section '" + field + "' defined twice");
            }
            target->present = true;
            target->header_line = line_no;
            current = target;
            feed_rows(rhs.substr(1), line_no);
            continue;
        }
        if (field == "baseMVA") {
            if (!rhs.empty() && rhs.back() == ';') {
                rhs.pop_back();
            }
            base_mva = parse_number(trim(rhs), line_no);
            continue;
        }
        // Scalars and strings such as mpc.version are accepted and ignored.
    }
    if (current != nullptr) {
        throw ParseError(line_no, "unterminated matrix starting on line " + std::to_string(current->header_line));
    }
    if (in_cell) {
        throw ParseError(line_no, "unterminated cell array");
    }
    if (!base_mva) {
        throw ParseError(line_no, "missing mpc.baseMVA");
    }
    if (!bus_m.present) {
        throw ParseError(line_no, "missing mpc.bus section");
    }
    if (!branch_m.present) {
        throw ParseError(line_no, "missing mpc.branch section");
    }
    if (!gen_m.present) {
        throw ParseError(line_no, "missing mpc.gen section");
    }
    const double base = *base_mva;
    if (!(base > 0.0)) {
        throw ValidationError("baseMVA must be positive");
    }

    std::vector<Bus> buses;
    buses.reserve(bus_m.rows.size());
    for (std::size_t k = 0; k < bus_m.rows.size(); ++k) {
        require_columns(bus_m, k, 13, "bus");
        const auto& r = bus_m.rows[k];
        const auto line = bus_m.lines[k];
        Bus bus;
        bus.id = as_int(r[0], line, "bus id");
        const int type = as_int(r[1], line, "bus type");
        if (type < 1 || type > 3) {
            throw ParseError(line, "unsupported bus type " + std::to_string(type) + " for bus " +
                                       std::to_string(bus.id));
        }
        bus.kind = static_cast<BusKind>(type);
        bus.load_p = r[2] / base;
        bus.load_q = r[3] / base;
        bus.shunt_g = r[4] / base;
        bus.shunt_b = r[5] / base;
        bus.area = as_int(r[6], line, "area");
        bus.vm_init = r[7];
        bus.va_init = r[8] * kDegToRad;
        bus.base_kv = r[9];
        bus.zone = as_int(r[10], line, "zone");
        bus.vmax = r[11];
        bus.vmin = r[12];
        bus.v_setpoint = bus.vm_init;
        buses.push_back(bus);
    }

    std::vector<Generator> generators;
    generators.reserve(gen_m.rows.size());
    for (std::size_t k = 0; k < gen_m.rows.size(); ++k) {
        require_columns(gen_m, k, 8, "gen");
        const auto& r = gen_m.rows[k];
        Generator gen;
        gen.bus = as_int(r[0], gen_m.lines[k], "generator bus");
        gen.p_gen = r[1] / base;
        gen.q_gen = r[2] / base;
        gen.q_max = r[3] / base;
        gen.q_min = r[4] / base;
        gen.v_setpoint = r[5];
        gen.mva_base = r[6];
        gen.in_service = r[7] > 0.0;
        gen.p_max = r.size() > 8 ? r[8] / base : 0.0;
        gen.p_min = r.size() > 9 ? r[9] / base : 0.0;
        generators.push_back(gen);
    }

    std::vector<Branch> branches;
    branches.reserve(branch_m.rows.size());
    for (std::size_t k = 0; k < branch_m.rows.size(); ++k) {
        require_columns(branch_m, k, 11, "branch");
        const auto& r = branch_m.rows[k];
        const auto line = branch_m.lines[k];
        Branch br;
        br.from_bus = as_int(r[0], line, "from bus");
        br.to_bus = as_int(r[1], line, "to bus");
        br.r = r[2];
        br.x = r[3];
        br.b_charging = r[4];
        br.rate_a = r[5];
        br.tap_ratio = r[8] == 0.0 ? 1.0 : r[8];
        br.phase_shift = r[9] * kDegToRad;
        br.in_service = r[10] > 0.0;
        branches.push_back(br);
    }

    return NetworkCase(std::move(name), base, std::move(buses), std::move(branches), std::move(generators));
}

NetworkCase load_case(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open case file '" + path + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    std::string name = path;
    if (const auto slash = name.find_last_of("/\\"); slash != std::string::npos) {
        name = name.substr(slash + 1);
    }
    if (const auto dot = name.rfind('.'); dot != std::string::npos && dot > 0) {
        name = name.substr(0, dot);
    }
    return parse_case(buffer.str(), name);
}

std::string serialize_case(const NetworkCase& network) {
    const double base = network.mva_base();
    const auto unscale = [base](double pu) {
        return format_exact(exact_preimage(pu, pu * base, [base](double c) { return c / base; }));
    };
    const auto degrees = [](double rad) {
        return format_exact(exact_preimage(rad, rad / kDegToRad, [](double c) { return c * kDegToRad; }));
    };
    const auto num = [](double v) { return format_exact(v); };

    std::ostringstream os;
    os << "function mpc = " << network.name() << "\n";
    os << "mpc.version = '2';\n";
    os << "mpc.baseMVA = " << num(base) << ";\n\n";
    os << "%% bus data\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n";
    for (const auto& b : network.buses()) {
        os << '\t' << b.id << '\t' << static_cast<int>(b.kind) << '\t' << unscale(b.load_p) << '\t'
           << unscale(b.load_q) << '\t' << unscale(b.shunt_g) << '\t' << unscale(b.shunt_b) << '\t' << b.area
           << '\t' << num(b.vm_init) << '\t' << degrees(b.va_init) << '\t' << num(b.base_kv) << '\t' << b.zone
           << '\t' << num(b.vmax) << '\t' << num(b.vmin) << ";\n";
    }
    os << "];\n\n%% generator data\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\nmpc.gen = [\n";
    for (const auto& g : network.generators()) {
        os << '\t' << g.bus << '\t' << unscale(g.p_gen) << '\t' << unscale(g.q_gen) << '\t' << unscale(g.q_max)
           << '\t' << unscale(g.q_min) << '\t' << num(g.v_setpoint) << '\t' << num(g.mva_base) << '\t'
           << (g.in_service ? 1 : 0) << '\t' << unscale(g.p_max) << '\t' << unscale(g.p_min) << ";\n";
    }
    os << "];\n\n%% branch data\n"
       << "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\nmpc.branch = [\n";
    for (const auto& br : network.branches()) {
        os << '\t' << br.from_bus << '\t' << br.to_bus << '\t' << num(br.r) << '\t' << num(br.x) << '\t'
           << num(br.b_charging) << '\t' << num(br.rate_a) << "\t0\t0\t" << num(br.tap_ratio) << '\t'
           << degrees(br.phase_shift) << '\t' << (br.in_service ? 1 : 0) << ";\n";
    }
    os << "];\n";
    return os.str();
}

}  // namespace gridshield
