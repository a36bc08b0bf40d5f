#pragma once

#include "gridshield/corrdet.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace gridshield {

/// Training-set mean and std of one detector's scores.
struct Standardizer {
    double mean = 0.0;
    double std = 1.0;

    double operator()(double score) const { return (score - mean) / std; }
    nlohmann::json to_json() const { return {{"mean", mean}, {"std", std}}; }
    bool operator==(const Standardizer&) const = default;
};

/// Mean and sample std (n - 1) over the finite scores at `rows`. Infinite
/// scores (failed estimations) are left out. Throws ValidationError when the
/// std is zero.
Standardizer fit_standardizer(const std::vector<double>& scores, const RowSet& rows, const std::string& name);

struct FusionScores {
    std::vector<double> fused;
    Standardizer se;
    Standardizer ecd;
};

/// psi_fusion = (psi_ecd - mean_ecd) / std_ecd + (psi_se - mean_se) / std_se, with
/// both standardizers fit on `rows` only. Score vectors are aligned by position.
FusionScores fuse_scores(const std::vector<double>& se, const std::vector<double>& ecd, const RowSet& rows);

/// select_threshold applied to fused training scores.
ThresholdChoice fusion_threshold(const std::vector<double>& train_scores, const std::vector<int>& train_labels,
                                 const std::vector<double>& eta_grid, double eta_default = 3.0);

}  // namespace gridshield
