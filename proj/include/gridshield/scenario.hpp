#pragma once

#include "gridshield/case.hpp"
#include "gridshield/noise.hpp"
#include "gridshield/powerflow.hpp"
#include "gridshield/schema.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gridshield {

/// Mean-reverting load multiplier dX = -beta (X - mu) dt + sigma_n dW.
struct OUProcess {
    double beta = 0.01;
    double sigma_n = 0.004;
    double mu = 1.0;
    double dt = 1.0;
    double state = 1.0;

    void validate() const;
    double stationary_variance() const { return sigma_n * sigma_n / (2.0 * beta); }
};

/// Exact one-step transition of the process given a standard normal draw.
double ou_step(const OUProcess& p, double noise);

/// Load drift settings shared by every bus.
struct OUConfig {
    double beta = 0.01;
    double sigma_n = 0.004;
    double dt = 1.0;
    double mu = 1.0;
    /// Samples between redraws of each bus's long-term mean; 0 keeps mu fixed.
    std::size_t mean_update_period = 1000;
    double mean_low = 0.9;
    double mean_high = 1.1;
    double clamp_min = 0.01;
    /// One multiplier path per bus for both P and Q (constant power factor).
    bool shared_pq = true;

    void validate() const;
    nlohmann::json to_json() const;
    static OUConfig from_json(const nlohmann::json& j);
    bool operator==(const OUConfig&) const = default;
};

struct LoadPaths {
    std::vector<LoadVector> loads;
    std::size_t clamp_hits = 0;
};

LoadPaths gen_loads(const NetworkCase& network, const OUConfig& cfg, std::size_t samples, std::uint64_t seed);

struct AttackPlan {
    double fraction_attacked = 0.05;
    std::size_t min_measurements = 1;
    std::size_t max_measurements = 3;
    double magnitude_min = 5.0;   // in multiples of the measurement's noise std
    double magnitude_max = 15.0;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static AttackPlan from_json(const nlohmann::json& j);
    bool operator==(const AttackPlan&) const = default;
};

struct Sample {
    std::size_t t = 0;
    Vector z;
    int label = 0;
    std::vector<std::size_t> attacked_indices;
    std::vector<double> bias;  // added value per attacked index, pu

    bool operator==(const Sample&) const = default;
};

struct DatasetMeta {
    std::string case_name;
    std::string case_text;  // serialized case, so a dataset is self-contained
    std::uint64_t load_seed = 0;
    std::uint64_t noise_seed = 0;
    bool attacked = false;
    OUConfig ou;
    AttackPlan attack;
    NoiseModel noise;
    std::size_t floor_hits = 0;
    std::size_t clamp_hits = 0;
    std::string generated_at;

    bool operator==(const DatasetMeta&) const = default;
};

struct Dataset {
    MeasurementSchema schema;
    std::vector<Sample> samples;
    Vector sigma;  // nominal std per measurement at base load
    DatasetMeta meta;

    std::size_t size() const noexcept { return samples.size(); }
    std::size_t dimension() const noexcept { return schema.size(); }
    NetworkCase network() const;
    std::vector<int> labels() const;
    /// Rows as a samples x d matrix.
    RowMatrix matrix() const;

    bool operator==(const Dataset&) const = default;
};

struct GenerateOptions {
    OUConfig ou;
    NoiseModel noise;
    std::uint64_t load_seed = 0;
    std::uint64_t noise_seed = 0;
    PowerFlowOptions powerflow;
    std::size_t workers = 0;
};

/// Noisy, unattacked measurement stream for `loads`.
Dataset gen_clean_dataset(const NetworkCase& network, const MeasurementSchema& schema, const LoadPaths& loads,
                          const GenerateOptions& options);

/// Adds FDI biases to a random fraction of samples. Bias on index i is
/// +-magnitude * noise.sigma(z_i) with z_i the pre-attack value. Zero
/// injections are never attacked.
Dataset inject_attacks(Dataset dataset, const AttackPlan& plan);

/// gen_loads, gen_clean_dataset and inject_attacks in one call.
Dataset gen_dataset(const NetworkCase& network, const MeasurementSchema& schema, std::size_t samples,
                    const GenerateOptions& options, const AttackPlan& attack);

inline constexpr int kDatasetFormatVersion = 1;

/// Writes `path` (CSV: t, label, z_0..z_{d-1}) and `sidecar_path(path)` (JSON).
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// SOURCE_DATE_EPOCH if set, else the current time, as ISO-8601 UTC.
std::string generation_timestamp();

}  // namespace gridshield
