#pragma once

#include "gridshield/corrdet.hpp"
#include "gridshield/estimation.hpp"
#include "gridshield/evaluation.hpp"
#include "gridshield/noise.hpp"
#include "gridshield/scenario.hpp"
#include "gridshield/schema.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace gridshield {

/// Everything a pipeline run needs. Loaded from one JSON file; all four seeds
/// are mandatory there.
struct RunConfig {
    std::filesystem::path case_path;  // relative paths resolve against the config file's directory
    std::size_t samples = 10000;
    MeteringPlan metering;
    OUConfig ou;
    NoiseModel noise;
    AttackPlan attack;  // attack.seed is seeds.attack
    WlsConfig wls;
    CorrDetConfig corrdet;
    EvalConfig eval;    // eval.split_seed is seeds.split
    std::uint64_t load_seed = 0;
    std::uint64_t noise_seed = 0;

    /// Throws ValidationError for bad values or a missing case file.
    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

/// Throws IoError if unreadable and ValidationError if malformed.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace gridshield
