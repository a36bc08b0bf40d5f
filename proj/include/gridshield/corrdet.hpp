#pragma once

#include "gridshield/scenario.hpp"
#include "gridshield/types.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace gridshield {

struct CorrDetConfig {
    std::vector<double> eta_grid = default_eta_grid();
    /// Ridge added to every covariance, as a multiple of trace(Sigma) / dim.
    double ridge_scale = 1e-6;
    /// Multiplier used when training labels hold a single class.
    double eta_default = 3.0;
    /// Exponential-forgetting update of (mu, Sigma^-1) on test samples judged normal.
    bool adaptive = false;
    double forgetting = 0.999;

    static std::vector<double> default_eta_grid();  // 0, 0.25, ..., 10
    void validate() const;
    nlohmann::json to_json() const;
    static CorrDetConfig from_json(const nlohmann::json& j);
    bool operator==(const CorrDetConfig&) const = default;
};

/// One CorrDet detector over a subset of measurement indices.
struct DetectorModel {
    int bus = -1;  // owning bus id for a local detector, -1 for the global one
    std::vector<std::size_t> indices;
    Vector mu;
    Matrix sigma_inv;
    double tau = 0.0;
    double eta = 0.0;
    double mu_thr = 0.0;
    double sigma_thr = 0.0;
    double f1 = 0.0;
    double ridge = 0.0;
    double condition = 1.0;

    std::size_t dimension() const noexcept { return indices.size(); }
    /// Values of `z` at this detector's indices.
    Vector gather(const Vector& z) const;

    nlohmann::json to_json() const;
    static DetectorModel from_json(const nlohmann::json& j);
    bool operator==(const DetectorModel&) const = default;
};

/// Squared Mahalanobis distance (z - mu)' Sigma^-1 (z - mu).
double corrdet_distance(const DetectorModel& model, const Vector& z_sub);

/// Mean, ridge-regularized sample covariance (divisor n - 1) and its inverse
/// from `rows` (n x dim). Sets mu, sigma_inv, ridge and condition.
void fit_detector(DetectorModel& model, const Matrix& rows, double ridge_scale);

double f1_score(const std::vector<double>& scores, const std::vector<int>& labels, double tau);

struct ThresholdChoice {
    double tau = 0.0;
    double eta = 0.0;
    double f1 = 0.0;
    double mu_thr = 0.0;
    double sigma_thr = 0.0;
    bool fallback = false;  // training labels held a single class
};

/// tau = mu_thr + eta sigma_thr over normal-sample scores; picks the eta with the
/// best training F1 (score >= tau predicts anomalous), ties to the larger eta.
ThresholdChoice select_threshold(const std::vector<double>& scores, const std::vector<int>& labels,
                                 const std::vector<double>& eta_grid, double eta_default = 3.0);

/// Exponential forgetting: mu <- mu + (1 - l) d, Sigma <- l (Sigma + (1 - l) d d'),
/// with the inverse kept current by Sherman-Morrison.
void update_detector(DetectorModel& model, const Vector& z_sub, double forgetting);

struct EnsembleModel {
    std::vector<DetectorModel> locals;  // ascending bus id
    std::vector<std::size_t> excluded;  // zero-injection indices

    nlohmann::json to_json() const;
    static EnsembleModel from_json(const nlohmann::json& j);
    bool operator==(const EnsembleModel&) const = default;
};

/// Per-bus measurement groups: Vmag, Pinj, Qinj of the bus plus every flow on
/// an incident branch, zero injections removed. Keyed by bus id, ascending;
/// buses left with no measurement are omitted.
std::vector<std::pair<int, std::vector<std::size_t>>> ensemble_groups(const MeasurementSchema& schema);

/// Rows (sample positions in the dataset) used for training.
using RowSet = std::vector<std::size_t>;

EnsembleModel fit_ensemble(const Dataset& dataset, const RowSet& train, const CorrDetConfig& cfg = {},
                           std::size_t workers = 0);

struct EcdVerdict {
    std::vector<double> delta;  // per local, same order as EnsembleModel::locals
    std::vector<int> triggered; // bus ids with delta >= tau
    int label = 0;
    double score = 0.0;
};

EcdVerdict ecd_classify(const EnsembleModel& model, const Vector& z);

DetectorModel fit_global(const Dataset& dataset, const RowSet& train, const CorrDetConfig& cfg = {});

struct DetectionScores {
    std::vector<double> score;
    std::vector<int> label;
    std::vector<std::vector<int>> triggered;  // ECD only
};

/// Scores `rows` in order. With cfg.adaptive the models are updated on rows
/// judged normal, sequentially.
DetectionScores run_ecd(EnsembleModel model, const Dataset& dataset, const RowSet& rows, const CorrDetConfig& cfg,
                        std::size_t workers = 0);
DetectionScores run_corrdet_global(DetectorModel model, const Dataset& dataset, const RowSet& rows,
                                   const CorrDetConfig& cfg, std::size_t workers = 0);

}  // namespace gridshield
