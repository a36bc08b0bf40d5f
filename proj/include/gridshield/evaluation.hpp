#pragma once

#include "gridshield/corrdet.hpp"
#include "gridshield/estimation.hpp"
#include "gridshield/fusion.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gridshield {

inline constexpr double kTruncatedFpr = 0.2;
inline constexpr std::size_t kRocGridPoints = 1001;

/// Points sorted by fpr, starting at (0, 0) and ending at (1, 1). Equal scores
/// form one step of the sweep.
struct RocCurve {
    std::vector<double> fpr;
    std::vector<double> tpr;
    double auc = 0.0;
    double auc_trunc = 0.0;  // area over fpr in [0, kTruncatedFpr] divided by kTruncatedFpr
};

/// Higher scores mean "more anomalous". Throws ValidationError when labels hold
/// a single class or a score is NaN.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

/// Trapezoidal area under `roc` over fpr in [0, max_fpr].
double partial_auc(const RocCurve& roc, double max_fpr);

/// Evenly spaced fpr values on [0, 1].
std::vector<double> fpr_grid(std::size_t points = kRocGridPoints);

/// tpr at each grid fpr, linear between points; on a vertical segment the
/// upper end is used.
std::vector<double> tpr_at(const RocCurve& roc, const std::vector<double>& grid);

struct MeanRoc {
    std::vector<double> fpr;
    std::vector<double> tpr;
    std::vector<double> tpr_min;
    std::vector<double> tpr_max;
    double auc = 0.0;
};

/// Vertical average of `curves` on fpr_grid(points).
MeanRoc vertical_average(const std::vector<RocCurve>& curves, std::size_t points = kRocGridPoints);

enum class Method { Se, Ecd, CorrDet, Fusion };

std::string to_string(Method m);
/// Accepts se, ecd, corrdet, fusion. Throws ValidationError listing the valid names.
Method method_from_string(const std::string& s);
std::vector<Method> all_methods();

struct EvalConfig {
    std::size_t repeats = 10;
    double train_frac = 0.3;
    std::uint64_t split_seed = 0;
    /// Train on one contiguous block of samples instead of a uniform random subset.
    bool block_split = false;
    /// Fit the fusion standardizers on normal training rows instead of all training rows.
    bool normalize_on_normals = false;
    std::vector<Method> methods = all_methods();

    void validate() const;
    nlohmann::json to_json() const;
    /// "split_seed" is mandatory.
    static EvalConfig from_json(const nlohmann::json& j);
    bool operator==(const EvalConfig&) const = default;
};

struct Split {
    RowSet train;  // ascending
    RowSet test;   // ascending
};

/// Split for repeat `repeat`, drawn from a stream keyed by (split_seed, repeat).
Split make_split(std::size_t samples, const EvalConfig& cfg, std::size_t repeat);

struct MethodSummary {
    std::vector<RocCurve> curves;  // one per completed repeat
    std::vector<double> auc;
    std::vector<double> auc_trunc;
    std::vector<double> f1;        // test-set F1 at the trained threshold
    double mean_auc = 0.0;
    double std_auc = 0.0;
    double mean_auc_trunc = 0.0;
    double mean_f1 = 0.0;
    MeanRoc mean_roc;
};

struct RepeatRecord {
    std::size_t repeat = 0;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    std::size_t train_attacked = 0;
    std::size_t test_attacked = 0;
    bool ok = false;
    std::string error;
    nlohmann::json details;  // thresholds and normalization constants
};

struct ExperimentReport {
    EvalConfig eval;
    WlsConfig wls;
    CorrDetConfig corrdet;
    std::size_t samples = 0;
    std::size_t dimension = 0;
    std::size_t se_failures = 0;
    std::map<Method, MethodSummary> methods;
    std::vector<RepeatRecord> repeats;
    bool partial = false;

    /// FNV-1a of the serialized configuration and dataset identity.
    std::string config_digest;

    nlohmann::json to_json() const;
};

/// Repeated train/test evaluation. SE scores are computed once (or taken from
/// `se`) and shared by all repeats; ECD, global CorrDet, the fusion
/// standardizers and thresholds are refit on each training split. A failed
/// repeat is logged, recorded and excluded, and marks the report partial.
ExperimentReport run_experiment(const Dataset& dataset, const EvalConfig& eval, const WlsConfig& wls = {},
                                const CorrDetConfig& corrdet = {}, std::size_t workers = 0,
                                const SeScores* se = nullptr);

/// report.json plus <method>/roc_mean.csv and <method>/roc_repeat_<k>.csv.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace gridshield
