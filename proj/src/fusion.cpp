#include "gridshield/fusion.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace gridshield {

Standardizer fit_standardizer(const std::vector<double>& scores, const RowSet& rows, const std::string& name) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto r : rows) {
        if (std::isfinite(scores.at(r))) {
            sum += scores[r];
            ++n;
        }
    }
    if (n < 2) {
        throw ValidationError(name + " has fewer than two finite training scores");
    }
    Standardizer s;
    s.mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto r : rows) {
        if (std::isfinite(scores[r])) {
            ss += (scores[r] - s.mean) * (scores[r] - s.mean);
        }
    }
    s.std = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(s.std > 0.0)) {
        throw ValidationError(name + " training scores have zero spread (degenerate detector)");
    }
    return s;
}

FusionScores fuse_scores(const std::vector<double>& se, const std::vector<double>& ecd, const RowSet& rows) {
    if (se.size() != ecd.size()) {
        throw ValidationError("SE and ECD score vectors have different lengths");
    }
    FusionScores out;
    out.se = fit_standardizer(se, rows, "SE");
    out.ecd = fit_standardizer(ecd, rows, "ECD");
    out.fused.resize(se.size());
    for (std::size_t k = 0; k < se.size(); ++k) {
        out.fused[k] = out.ecd(ecd[k]) + out.se(se[k]);
    }
    return out;
}

ThresholdChoice fusion_threshold(const std::vector<double>& train_scores, const std::vector<int>& train_labels,
                                 const std::vector<double>& eta_grid, double eta_default) {
    const auto choice = select_threshold(train_scores, train_labels, eta_grid, eta_default);
    if (choice.fallback) {
        spdlog::warn("training labels hold a single class; fusion threshold falls back to eta = {}", eta_default);
    }
    return choice;
}

}  // namespace gridshield
