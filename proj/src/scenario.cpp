#include "gridshield/scenario.hpp"

#include "gridshield/io.hpp"
#include "gridshield/measurement.hpp"
#include "gridshield/parallel.hpp"
#include "gridshield/random.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

namespace gridshield {

namespace fs = std::filesystem;

void OUProcess::validate() const {
    if (!(beta > 0.0)) {
        throw ValidationError("O-U beta must be > 0");
    }
    if (!(dt > 0.0)) {
        throw ValidationError("O-U dt must be > 0");
    }
    if (!(sigma_n >= 0.0)) {
        throw ValidationError("O-U sigma_n must be >= 0");
    }
}

double ou_step(const OUProcess& p, double noise) {
    const double decay = std::exp(-p.beta * p.dt);
    // std of the exact transition: sigma_n * sqrt((1 - e^{-2 beta dt}) / (2 beta))
    const double spread = p.sigma_n * std::sqrt(-std::expm1(-2.0 * p.beta * p.dt) / (2.0 * p.beta));
    return p.mu + (p.state - p.mu) * decay + spread * noise;
}

void OUConfig::validate() const {
    OUProcess{beta, sigma_n, mu, dt, mu}.validate();
    if (!(mean_low > 0.0) || mean_high < mean_low) {
        throw ValidationError("O-U mean range must satisfy 0 < mean_low <= mean_high");
    }
    if (!(clamp_min > 0.0)) {
        throw ValidationError("O-U clamp_min must be > 0");
    }
}

nlohmann::json OUConfig::to_json() const {
    return {{"beta", beta},
            {"sigma_n", sigma_n},
            {"dt", dt},
            {"mu", mu},
            {"mean_update_period", mean_update_period},
            {"mean_low", mean_low},
            {"mean_high", mean_high},
            {"clamp_min", clamp_min},
            {"shared_pq", shared_pq}};
}

OUConfig OUConfig::from_json(const nlohmann::json& j) {
    OUConfig c;
    c.beta = j.value("beta", c.beta);
    c.sigma_n = j.value("sigma_n", c.sigma_n);
    c.dt = j.value("dt", c.dt);
    c.mu = j.value("mu", c.mu);
    c.mean_update_period = j.value("mean_update_period", c.mean_update_period);
    c.mean_low = j.value("mean_low", c.mean_low);
    c.mean_high = j.value("mean_high", c.mean_high);
    c.clamp_min = j.value("clamp_min", c.clamp_min);
    c.shared_pq = j.value("shared_pq", c.shared_pq);
    c.validate();
    return c;
}

namespace {

// Multiplier path for one bus component; returns the number of clamped steps.
std::size_t multiplier_path(const OUConfig& cfg, std::size_t samples, std::uint64_t seed, std::uint64_t stream,
                            std::vector<double>& out) {
    Rng noise_rng = make_stream(seed, stream, kLoadStream);
    Rng mean_rng = make_stream(seed, stream, kMeanStream);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> mean_draw(cfg.mean_low, cfg.mean_high);
    OUProcess p{cfg.beta, cfg.sigma_n, cfg.mu, cfg.dt, cfg.mu};
    std::size_t clamped = 0;
    out.resize(samples);
    for (std::size_t t = 0; t < samples; ++t) {
        if (cfg.mean_update_period > 0 && t > 0 && t % cfg.mean_update_period == 0) {
            p.mu = mean_draw(mean_rng);
        }
        out[t] = p.state;
        p.state = ou_step(p, normal(noise_rng));
        if (p.state < cfg.clamp_min) {
            p.state = cfg.clamp_min;
            ++clamped;
        }
    }
    return clamped;
}

}  // namespace

LoadPaths gen_loads(const NetworkCase& network, const OUConfig& cfg, std::size_t samples, std::uint64_t seed) {
    if (samples == 0) {
        throw ValidationError("sample count must be > 0");
    }
    cfg.validate();
    const LoadVector base = base_loads(network);
    const auto m = network.bus_count();
    LoadPaths paths;
    paths.loads.assign(samples, base);
    std::vector<double> mult_p;
    std::vector<double> mult_q;
    for (std::size_t b = 0; b < m; ++b) {
        paths.clamp_hits += multiplier_path(cfg, samples, seed, b, mult_p);
        if (cfg.shared_pq) {
            mult_q = mult_p;
        } else {
            paths.clamp_hits += multiplier_path(cfg, samples, seed, m + b, mult_q);
        }
        const auto i = static_cast<Eigen::Index>(b);
        for (std::size_t t = 0; t < samples; ++t) {
            paths.loads[t].p(i) = base.p(i) * mult_p[t];
            paths.loads[t].q(i) = base.q(i) * mult_q[t];
        }
    }
    if (paths.clamp_hits > 0) {
        spdlog::warn("load multiplier clamped at {} on {} steps", cfg.clamp_min, paths.clamp_hits);
    }
    return paths;
}

void AttackPlan::validate() const {
    if (!(fraction_attacked >= 0.0 && fraction_attacked < 1.0)) {
        throw ValidationError("attack fraction must lie in [0, 1)");
    }
    if (min_measurements == 0 || max_measurements < min_measurements) {
        throw ValidationError("attack measurement count range must satisfy 1 <= min <= max");
    }
    if (!(magnitude_min > 0.0) || magnitude_max < magnitude_min) {
        throw ValidationError("attack magnitudes must satisfy 0 < min <= max");
    }
}

nlohmann::json AttackPlan::to_json() const {
    return {{"fraction_attacked", fraction_attacked},
            {"min_measurements", min_measurements},
            {"max_measurements", max_measurements},
            {"magnitude_min", magnitude_min},
            {"magnitude_max", magnitude_max},
            {"seed", seed}};
}

AttackPlan AttackPlan::from_json(const nlohmann::json& j) {
    AttackPlan a;
    a.fraction_attacked = j.value("fraction_attacked", a.fraction_attacked);
    a.min_measurements = j.value("min_measurements", a.min_measurements);
    a.max_measurements = j.value("max_measurements", a.max_measurements);
    a.magnitude_min = j.value("magnitude_min", a.magnitude_min);
    a.magnitude_max = j.value("magnitude_max", a.magnitude_max);
    a.seed = j.at("seed").get<std::uint64_t>();
    a.validate();
    return a;
}

NetworkCase Dataset::network() const { return parse_case(meta.case_text, meta.case_name); }

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        out.push_back(s.label);
    }
    return out;
}

RowMatrix Dataset::matrix() const {
    RowMatrix out(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(dimension()));
    for (std::size_t t = 0; t < samples.size(); ++t) {
        out.row(static_cast<Eigen::Index>(t)) = samples[t].z.transpose();
    }
    return out;
}

Dataset gen_clean_dataset(const NetworkCase& network, const MeasurementSchema& schema, const LoadPaths& loads,
                          const GenerateOptions& options) {
    options.noise.validate();
    const PowerFlowSolver solver(network);
    const MeasurementFunction h(network, schema);
    const auto k = loads.loads.size();

    Dataset ds;
    ds.schema = schema;
    ds.samples.resize(k);
    std::atomic<std::size_t> floor_hits{0};
    parallel_for(k, options.workers, [&](std::size_t t) {
        PowerFlowResult pf;
        try {
            pf = solver.solve(loads.loads[t], options.powerflow);
        } catch (const Error& e) {
            throw Error("power flow failed at sample " + std::to_string(t) + ": " + e.what());
        }
        const Vector truth = eval_h(h, pf.state);
        Rng rng = make_stream(options.noise_seed, t, kNoiseStream);
        std::normal_distribution<double> normal;
        Vector z(truth.size());
        std::size_t hits = 0;
        for (Eigen::Index i = 0; i < truth.size(); ++i) {
            if (options.noise.relative * std::abs(truth(i)) < options.noise.floor) {
                ++hits;
            }
            z(i) = truth(i) + options.noise.sigma(truth(i)) * normal(rng);
        }
        floor_hits += hits;
        ds.samples[t] = Sample{t, std::move(z), 0, {}, {}};
    });

    const auto base = solver.solve(base_loads(network), options.powerflow);
    ds.sigma = SigmaModel(network, schema, options.noise)(eval_h(h, base.state));

    ds.meta.case_name = network.name();
    ds.meta.case_text = serialize_case(network);
    ds.meta.load_seed = options.load_seed;
    ds.meta.noise_seed = options.noise_seed;
    ds.meta.ou = options.ou;
    ds.meta.noise = options.noise;
    ds.meta.floor_hits = floor_hits.load();
    ds.meta.clamp_hits = loads.clamp_hits;
    ds.meta.generated_at = generation_timestamp();
    return ds;
}

Dataset inject_attacks(Dataset dataset, const AttackPlan& plan) {
    plan.validate();
    if (dataset.meta.attacked) {
        throw ValidationError("dataset already carries injected attacks");
    }
    const auto candidates = dataset.schema.regular_indices();
    if (candidates.empty()) {
        throw ValidationError("schema has no attackable measurements");
    }
    for (auto& s : dataset.samples) {
        Rng rng = make_stream(plan.seed, s.t, kAttackStream);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        if (!(unit(rng) < plan.fraction_attacked)) {
            continue;
        }
        const auto count = std::min(
            std::uniform_int_distribution<std::size_t>(plan.min_measurements, plan.max_measurements)(rng),
            candidates.size());
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        std::set<std::size_t> chosen;
        while (chosen.size() < count) {
            chosen.insert(candidates[pick(rng)]);
        }
        std::uniform_real_distribution<double> magnitude(plan.magnitude_min, plan.magnitude_max);
        for (const auto i : chosen) {
            const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
            const auto row = static_cast<Eigen::Index>(i);
            const double b = sign * magnitude(rng) * dataset.meta.noise.sigma(s.z(row));
            s.z(row) += b;
            s.attacked_indices.push_back(i);
            s.bias.push_back(b);
        }
        s.label = 1;
    }
    dataset.meta.attacked = true;
    dataset.meta.attack = plan;
    return dataset;
}

Dataset gen_dataset(const NetworkCase& network, const MeasurementSchema& schema, std::size_t samples,
                    const GenerateOptions& options, const AttackPlan& attack) {
    const auto loads = gen_loads(network, options.ou, samples, options.load_seed);
    return inject_attacks(gen_clean_dataset(network, schema, loads, options), attack);
}

std::string generation_timestamp() {
    std::time_t when = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch != nullptr && *epoch != '\0') {
        when = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    }
    std::tm utc{};
    gmtime_r(&when, &utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
}

// ---------------------------------------------------------------------------
// Persistence

fs::path sidecar_path(const fs::path& path) {
    fs::path out = path;
    out += ".json";
    return out;
}

namespace {

nlohmann::json meta_to_json(const DatasetMeta& m) {
    return {{"case_name", m.case_name},
            {"case", m.case_text},
            {"load_seed", m.load_seed},
            {"noise_seed", m.noise_seed},
            {"attacked", m.attacked},
            {"ou", m.ou.to_json()},
            {"attack", m.attack.to_json()},
            {"noise", m.noise.to_json()},
            {"floor_hits", m.floor_hits},
            {"clamp_hits", m.clamp_hits},
            {"generated_at", m.generated_at}};
}

DatasetMeta meta_from_json(const nlohmann::json& j) {
    DatasetMeta m;
    m.case_name = j.at("case_name").get<std::string>();
    m.case_text = j.at("case").get<std::string>();
    m.load_seed = j.at("load_seed").get<std::uint64_t>();
    m.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    m.attacked = j.at("attacked").get<bool>();
    m.ou = OUConfig::from_json(j.at("ou"));
    m.attack = AttackPlan::from_json(j.at("attack"));
    m.noise = NoiseModel::from_json(j.at("noise"));
    m.floor_hits = j.at("floor_hits").get<std::size_t>();
    m.clamp_hits = j.at("clamp_hits").get<std::size_t>();
    m.generated_at = j.at("generated_at").get<std::string>();
    return m;
}

}  // namespace

void save_dataset(const Dataset& dataset, const fs::path& path) {
    const auto d = dataset.dimension();
    std::string csv = "t,label";
    for (std::size_t i = 0; i < d; ++i) {
        csv += ",z_" + std::to_string(i);
    }
    csv += '\n';
    nlohmann::json attacks = nlohmann::json::array();
    for (const auto& s : dataset.samples) {
        if (static_cast<std::size_t>(s.z.size()) != d) {
            throw ValidationError("sample " + std::to_string(s.t) + " has the wrong length");
        }
        csv += std::to_string(s.t);
        csv += ',';
        csv += std::to_string(s.label);
        for (Eigen::Index i = 0; i < s.z.size(); ++i) {
            csv += ',';
            append_double(csv, s.z(i));
        }
        csv += '\n';
        if (s.label == 1) {
            attacks.push_back({{"t", s.t}, {"indices", s.attacked_indices}, {"bias", s.bias}});
        }
    }
    const nlohmann::json sidecar = {{"format_version", kDatasetFormatVersion},
                                    {"rows", dataset.samples.size()},
                                    {"dimension", d},
                                    {"schema", dataset.schema.to_json()},
                                    {"sigma", std::vector<double>(dataset.sigma.data(),
                                                                  dataset.sigma.data() + dataset.sigma.size())},
                                    {"meta", meta_to_json(dataset.meta)},
                                    {"attacks", attacks}};
    write_file(sidecar_path(path), sidecar.dump(1) + "\n");
    write_file(path, csv);
}

Dataset load_dataset(const fs::path& path) {
    nlohmann::json sidecar;
    try {
        sidecar = nlohmann::json::parse(read_file(sidecar_path(path)));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed dataset sidecar " + sidecar_path(path).string() + ": " + e.what());
    }
    const int version = sidecar.value("format_version", -1);
    if (version != kDatasetFormatVersion) {
        throw IoError("unsupported dataset format version " + std::to_string(version) + " (expected " +
                      std::to_string(kDatasetFormatVersion) + ")");
    }

    Dataset ds;
    try {
        ds.schema = MeasurementSchema::from_json(sidecar.at("schema"));
        const auto sigma = sidecar.at("sigma").get<std::vector<double>>();
        ds.sigma = Eigen::Map<const Vector>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
        ds.meta = meta_from_json(sidecar.at("meta"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed dataset sidecar: " + std::string(e.what()));
    }
    const auto rows = sidecar.at("rows").get<std::size_t>();
    const auto d = ds.schema.size();
    if (static_cast<std::size_t>(ds.sigma.size()) != d || sidecar.at("dimension").get<std::size_t>() != d) {
        throw IoError("dataset sidecar dimension mismatch");
    }

    const std::string csv = read_file(path);
    if (!csv.empty() && csv.back() != '\n') {
        throw IoError(path.string() + " is truncated (no final newline)");
    }
    std::size_t pos = csv.find('\n');
    if (pos == std::string::npos || csv.compare(0, 7, "t,label") != 0) {
        throw IoError(path.string() + " has no dataset header");
    }
    ++pos;
    ds.samples.reserve(rows);
    std::size_t line_no = 1;
    while (pos < csv.size()) {
        ++line_no;
        const std::size_t end = csv.find('\n', pos);
        const char* p = csv.data() + pos;
        const char* const stop = csv.data() + end;
        const auto bad = [&](const std::string& what) {
            return IoError(path.string() + " line " + std::to_string(line_no) + ": " + what);
        };
        Sample s;
        auto r = std::from_chars(p, stop, s.t);
        if (r.ec != std::errc() || r.ptr == stop || *r.ptr != ',') {
            throw bad("bad sample index");
        }
        r = std::from_chars(r.ptr + 1, stop, s.label);
        if (r.ec != std::errc() || (s.label != 0 && s.label != 1)) {
            throw bad("bad label");
        }
        s.z.resize(static_cast<Eigen::Index>(d));
        p = r.ptr;
        for (std::size_t i = 0; i < d; ++i) {
            if (p == stop || *p != ',') {
                throw bad("expected " + std::to_string(d + 2) + " columns");
            }
            double v = 0.0;
            r = std::from_chars(p + 1, stop, v);
            if (r.ec != std::errc() || !std::isfinite(v)) {
                throw bad("bad value in column " + std::to_string(i + 2));
            }
            s.z(static_cast<Eigen::Index>(i)) = v;
            p = r.ptr;
        }
        if (p != stop) {
            throw bad("trailing columns");
        }
        ds.samples.push_back(std::move(s));
        pos = end + 1;
    }
    if (ds.samples.size() != rows) {
        throw IoError(path.string() + " has " + std::to_string(ds.samples.size()) + " rows, sidecar declares " +
                      std::to_string(rows));
    }
    std::vector<std::size_t> where(rows, rows);
    for (std::size_t k = 0; k < rows; ++k) {
        if (ds.samples[k].t < rows) {
            where[ds.samples[k].t] = k;
        }
    }
    for (const auto& a : sidecar.at("attacks")) {
        const auto t = a.at("t").get<std::size_t>();
        if (t >= rows || where[t] == rows) {
            throw IoError("attack record for unknown sample " + std::to_string(t));
        }
        auto& s = ds.samples[where[t]];
        s.attacked_indices = a.at("indices").get<std::vector<std::size_t>>();
        s.bias = a.at("bias").get<std::vector<double>>();
    }
    for (const auto& s : ds.samples) {
        if ((s.label == 1) != !s.attacked_indices.empty()) {
            throw IoError("label and attack records disagree at sample " + std::to_string(s.t));
        }
    }
    return ds;
}

}  // namespace gridshield
