#include "gridshield/config.hpp"

#include "gridshield/io.hpp"

namespace gridshield {

namespace fs = std::filesystem;

void RunConfig::validate() const {
    if (case_path.empty()) {
        throw ValidationError("config needs a case file");
    }
    if (!fs::is_regular_file(case_path)) {
        throw ValidationError("case file not found: " + case_path.string());
    }
    if (samples < 1) {
        throw ValidationError("samples must be >= 1");
    }
    ou.validate();
    noise.validate();
    attack.validate();
    wls.validate();
    corrdet.validate();
    eval.validate();
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json attack_json = attack.to_json();
    attack_json.erase("seed");
    nlohmann::json eval_json = eval.to_json();
    eval_json.erase("split_seed");
    return {{"case", case_path.string()},
            {"samples", samples},
            {"metering", metering.to_json()},
            {"ou", ou.to_json()},
            {"noise", noise.to_json()},
            {"attack", attack_json},
            {"wls", wls.to_json()},
            {"corrdet", corrdet.to_json()},
            {"eval", eval_json},
            {"seeds",
             {{"load", load_seed}, {"noise", noise_seed}, {"attack", attack.seed}, {"split", eval.split_seed}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
    if (!j.is_object()) {
        throw ValidationError("config must be a JSON object");
    }
    for (const char* key : {"case", "seeds"}) {
        if (!j.contains(key)) {
            throw ValidationError(std::string("config is missing \"") + key + "\"");
        }
    }
    const auto& seeds = j.at("seeds");
    for (const char* key : {"load", "noise", "attack", "split"}) {
        if (!seeds.contains(key)) {
            throw ValidationError(std::string("config seeds must set \"") + key + "\"");
        }
    }
    RunConfig c;
    try {
        fs::path p = j.at("case").get<std::string>();
        c.case_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        c.samples = j.value("samples", c.samples);
        if (j.contains("metering")) {
            c.metering = MeteringPlan::from_json(j.at("metering"));
        }
        if (j.contains("ou")) {
            c.ou = OUConfig::from_json(j.at("ou"));
        }
        if (j.contains("noise")) {
            c.noise = NoiseModel::from_json(j.at("noise"));
        }
        nlohmann::json attack = j.value("attack", nlohmann::json::object());
        attack["seed"] = seeds.at("attack");
        c.attack = AttackPlan::from_json(attack);
        if (j.contains("wls")) {
            c.wls = WlsConfig::from_json(j.at("wls"));
        }
        if (j.contains("corrdet")) {
            c.corrdet = CorrDetConfig::from_json(j.at("corrdet"));
        }
        nlohmann::json eval = j.value("eval", nlohmann::json::object());
        eval["split_seed"] = seeds.at("split");
        c.eval = EvalConfig::from_json(eval);
        c.load_seed = seeds.at("load").get<std::uint64_t>();
        c.noise_seed = seeds.at("noise").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    const std::string text = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return RunConfig::from_json(j, path.parent_path());
}

}  // namespace gridshield
