#pragma once

#include "gridshield/case.hpp"
#include "gridshield/schema.hpp"
#include "gridshield/types.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <vector>

namespace gridshield {

/// Measurement noise std as a fraction of the measured magnitude, floored.
struct NoiseModel {
    double relative = 0.01;
    double floor = 1e-4;

    double sigma(double value) const { return std::max(relative * std::abs(value), floor); }
    void validate() const;

    nlohmann::json to_json() const;
    static NoiseModel from_json(const nlohmann::json& j);
    bool operator==(const NoiseModel&) const = default;
};

/// Per-measurement std vector for a given set of measured (or true) values.
/// Zero-injection entries get the root-sum-square of the stds of the flows
/// leaving their bus; a neighbour without a flow meter contributes the floor.
class SigmaModel {
public:
    SigmaModel(const NetworkCase& network, const MeasurementSchema& schema, NoiseModel noise = {});

    Vector operator()(const Vector& values) const;
    const NoiseModel& noise() const noexcept { return noise_; }

    /// Flow meter indices composing zero-injection entry `index` (-1 = unmetered neighbour).
    const std::vector<long>& sources(std::size_t index) const { return sources_[index]; }

private:
    NoiseModel noise_;
    std::vector<bool> zero_injection_;
    std::vector<std::vector<long>> sources_;
};

}  // namespace gridshield
