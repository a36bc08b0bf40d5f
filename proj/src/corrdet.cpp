#include "gridshield/corrdet.hpp"

#include "gridshield/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>

namespace gridshield {

std::vector<double> CorrDetConfig::default_eta_grid() {
    std::vector<double> grid;
    for (int k = 0; k <= 40; ++k) {
        grid.push_back(0.25 * k);
    }
    return grid;
}

void CorrDetConfig::validate() const {
    if (eta_grid.empty()) {
        throw ValidationError("eta grid must not be empty");
    }
    for (const double e : eta_grid) {
        if (!std::isfinite(e)) {
            throw ValidationError("eta grid values must be finite");
        }
    }
    if (!(ridge_scale >= 0.0)) {
        throw ValidationError("ridge_scale must be >= 0");
    }
    if (!(forgetting > 0.0 && forgetting < 1.0)) {
        throw ValidationError("forgetting factor must lie in (0, 1)");
    }
}

nlohmann::json CorrDetConfig::to_json() const {
    return {{"eta_grid", eta_grid},
            {"ridge_scale", ridge_scale},
            {"eta_default", eta_default},
            {"adaptive", adaptive},
            {"forgetting", forgetting}};
}

CorrDetConfig CorrDetConfig::from_json(const nlohmann::json& j) {
    CorrDetConfig c;
    if (j.contains("eta_grid")) {
        c.eta_grid = j.at("eta_grid").get<std::vector<double>>();
    }
    c.ridge_scale = j.value("ridge_scale", c.ridge_scale);
    c.eta_default = j.value("eta_default", c.eta_default);
    c.adaptive = j.value("adaptive", c.adaptive);
    c.forgetting = j.value("forgetting", c.forgetting);
    c.validate();
    return c;
}

Vector DetectorModel::gather(const Vector& z) const {
    Vector out(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        out(static_cast<Eigen::Index>(k)) = z(static_cast<Eigen::Index>(indices[k]));
    }
    return out;
}

nlohmann::json DetectorModel::to_json() const {
    const RowMatrix inv = sigma_inv;
    return {{"bus", bus},
            {"indices", indices},
            {"mu", std::vector<double>(mu.data(), mu.data() + mu.size())},
            {"sigma_inv", std::vector<double>(inv.data(), inv.data() + inv.size())},
            {"tau", tau},
            {"eta", eta},
            {"mu_thr", mu_thr},
            {"sigma_thr", sigma_thr},
            {"f1", f1},
            {"ridge", ridge},
            {"condition", condition}};
}

DetectorModel DetectorModel::from_json(const nlohmann::json& j) {
    DetectorModel m;
    m.bus = j.at("bus").get<int>();
    m.indices = j.at("indices").get<std::vector<std::size_t>>();
    const auto n = static_cast<Eigen::Index>(m.indices.size());
    const auto mu = j.at("mu").get<std::vector<double>>();
    const auto inv = j.at("sigma_inv").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(mu.size()) != n || static_cast<Eigen::Index>(inv.size()) != n * n) {
        throw ValidationError("detector model dimensions are inconsistent");
    }
    m.mu = Eigen::Map<const Vector>(mu.data(), n);
    m.sigma_inv = Eigen::Map<const RowMatrix>(inv.data(), n, n);
    m.tau = j.at("tau").get<double>();
    m.eta = j.at("eta").get<double>();
    m.mu_thr = j.at("mu_thr").get<double>();
    m.sigma_thr = j.at("sigma_thr").get<double>();
    m.f1 = j.at("f1").get<double>();
    m.ridge = j.at("ridge").get<double>();
    m.condition = j.at("condition").get<double>();
    return m;
}

double corrdet_distance(const DetectorModel& model, const Vector& z_sub) {
    if (z_sub.size() != model.mu.size()) {
        throw ValidationError("sample has " + std::to_string(z_sub.size()) + " values, detector expects " +
                              std::to_string(model.mu.size()));
    }
    const Vector d = z_sub - model.mu;
    return std::max(0.0, d.dot(model.sigma_inv * d));
}

void fit_detector(DetectorModel& model, const Matrix& rows, double ridge_scale) {
    const auto n = rows.rows();
    const auto dim = rows.cols();
    if (dim == 0) {
        throw ValidationError("detector has no measurements");
    }
    if (n < dim + 1) {
        throw ValidationError("need at least " + std::to_string(dim + 1) + " normal rows for a " +
                              std::to_string(dim) + "-dimensional detector, got " + std::to_string(n));
    }
    model.mu = rows.colwise().mean().transpose();
    const Matrix centered = rows.rowwise() - model.mu.transpose();
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    const double scale = cov.trace() / static_cast<double>(dim);
    model.ridge = ridge_scale * (scale > 0.0 ? scale : 1.0);
    cov.diagonal().array() += model.ridge;

    const Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw ValidationError("covariance is not positive definite after ridge " + std::to_string(model.ridge) +
                              "; increase ridge_scale");
    }
    Matrix inv = llt.solve(Matrix::Identity(dim, dim));
    model.sigma_inv = 0.5 * (inv + inv.transpose());
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
    const Vector ev = eig.eigenvalues();
    model.condition = ev.maxCoeff() / ev.minCoeff();
}

double f1_score(const std::vector<double>& scores, const std::vector<int>& labels, double tau) {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        const bool predicted = scores[k] >= tau;
        if (predicted && labels[k] == 1) {
            ++tp;
        } else if (predicted) {
            ++fp;
        } else if (labels[k] == 1) {
            ++fn;
        }
    }
    const auto denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

ThresholdChoice select_threshold(const std::vector<double>& scores, const std::vector<int>& labels,
                                 const std::vector<double>& eta_grid, double eta_default) {
    if (scores.size() != labels.size()) {
        throw ValidationError("score and label counts differ");
    }
    if (eta_grid.empty()) {
        throw ValidationError("eta grid must not be empty");
    }
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t normals = 0;
    std::size_t anomalies = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (labels[k] == 1) {
            ++anomalies;
        } else if (std::isfinite(scores[k])) {
            sum += scores[k];
            ++normals;
        }
    }
    if (normals == 0) {
        throw ValidationError("threshold selection needs at least one normal training score");
    }
    ThresholdChoice out;
    out.mu_thr = sum / static_cast<double>(normals);
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (labels[k] != 1 && std::isfinite(scores[k])) {
            sum_sq += (scores[k] - out.mu_thr) * (scores[k] - out.mu_thr);
        }
    }
    out.sigma_thr = normals > 1 ? std::sqrt(sum_sq / static_cast<double>(normals - 1)) : 0.0;

    if (anomalies == 0) {
        out.eta = eta_default;
        out.tau = out.mu_thr + out.eta * out.sigma_thr;
        out.fallback = true;
        return out;
    }
    std::vector<double> grid = eta_grid;
    std::sort(grid.begin(), grid.end());
    out.f1 = -1.0;
    for (const double eta : grid) {
        const double tau = out.mu_thr + eta * out.sigma_thr;
        const double f1 = f1_score(scores, labels, tau);
        if (f1 >= out.f1) {
            out.f1 = f1;
            out.eta = eta;
            out.tau = tau;
        }
    }
    return out;
}

void update_detector(DetectorModel& model, const Vector& z_sub, double forgetting) {
    const double l = forgetting;
    const Vector d = z_sub - model.mu;
    model.mu += (1.0 - l) * d;
    // (l (Sigma + c d d'))^-1 = (Sigma^-1 - c u u' / (1 + c d' u)) / l with u = Sigma^-1 d.
    const double c = 1.0 - l;
    const Vector u = model.sigma_inv * d;
    model.sigma_inv = (model.sigma_inv - (c / (1.0 + c * d.dot(u))) * u * u.transpose()) / l;
}

nlohmann::json EnsembleModel::to_json() const {
    nlohmann::json locals_json = nlohmann::json::array();
    for (const auto& m : locals) {
        locals_json.push_back(m.to_json());
    }
    return {{"locals", locals_json}, {"excluded", excluded}};
}

EnsembleModel EnsembleModel::from_json(const nlohmann::json& j) {
    EnsembleModel e;
    for (const auto& m : j.at("locals")) {
        e.locals.push_back(DetectorModel::from_json(m));
    }
    e.excluded = j.at("excluded").get<std::vector<std::size_t>>();
    return e;
}

std::vector<std::pair<int, std::vector<std::size_t>>> ensemble_groups(const MeasurementSchema& schema) {
    std::map<int, std::vector<std::size_t>> groups;
    for (const auto& e : schema) {
        if (e.zero_injection) {
            continue;
        }
        if (is_flow(e.kind)) {
            groups[e.from].push_back(e.index);
            groups[e.to].push_back(e.index);
        } else {
            groups[e.bus].push_back(e.index);
        }
    }
    std::vector<std::pair<int, std::vector<std::size_t>>> out;
    for (auto& [bus, idx] : groups) {
        std::sort(idx.begin(), idx.end());
        out.emplace_back(bus, std::move(idx));
    }
    return out;
}

namespace {

Matrix gather_rows(const Dataset& ds, const RowSet& rows, const std::vector<std::size_t>& indices) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(indices.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Vector& z = ds.samples[rows[r]].z;
        for (std::size_t c = 0; c < indices.size(); ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = z(static_cast<Eigen::Index>(indices[c]));
        }
    }
    return out;
}

RowSet normal_rows(const Dataset& ds, const RowSet& train) {
    RowSet out;
    for (const auto r : train) {
        if (ds.samples[r].label == 0) {
            out.push_back(r);
        }
    }
    return out;
}

void train_detector(DetectorModel& model, const Dataset& ds, const RowSet& train, const RowSet& normals,
                    const CorrDetConfig& cfg) {
    fit_detector(model, gather_rows(ds, normals, model.indices), cfg.ridge_scale);
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(train.size());
    labels.reserve(train.size());
    for (const auto r : train) {
        scores.push_back(corrdet_distance(model, model.gather(ds.samples[r].z)));
        labels.push_back(ds.samples[r].label);
    }
    const auto choice = select_threshold(scores, labels, cfg.eta_grid, cfg.eta_default);
    model.tau = choice.tau;
    model.eta = choice.eta;
    model.mu_thr = choice.mu_thr;
    model.sigma_thr = choice.sigma_thr;
    model.f1 = choice.f1;
}

}  // namespace

EnsembleModel fit_ensemble(const Dataset& dataset, const RowSet& train, const CorrDetConfig& cfg,
                           std::size_t workers) {
    cfg.validate();
    const auto groups = ensemble_groups(dataset.schema);
    const NetworkCase network = dataset.network();
    for (const auto& bus : network.buses()) {
        const bool covered =
            std::any_of(groups.begin(), groups.end(), [&](const auto& g) { return g.first == bus.id; });
        if (!covered) {
            spdlog::warn("bus {} has no non-zero-injection measurements; no local detector", bus.id);
        }
    }
    const RowSet normals = normal_rows(dataset, train);
    if (normals.size() == train.size()) {
        spdlog::warn("training rows hold no attacks; local thresholds fall back to eta = {}", cfg.eta_default);
    }
    EnsembleModel model;
    model.excluded = dataset.schema.zero_injection_indices();
    model.locals.resize(groups.size());
    parallel_for(groups.size(), workers, [&](std::size_t g) {
        DetectorModel& local = model.locals[g];
        local.bus = groups[g].first;
        local.indices = groups[g].second;
        train_detector(local, dataset, train, normals, cfg);
    });
    return model;
}

EcdVerdict ecd_classify(const EnsembleModel& model, const Vector& z) {
    EcdVerdict v;
    v.delta.reserve(model.locals.size());
    double max_triggered = -std::numeric_limits<double>::infinity();
    double min_all = std::numeric_limits<double>::infinity();
    for (const auto& local : model.locals) {
        const double d = corrdet_distance(local, local.gather(z));
        v.delta.push_back(d);
        min_all = std::min(min_all, d);
        if (d >= local.tau) {
            v.triggered.push_back(local.bus);
            max_triggered = std::max(max_triggered, d);
        }
    }
    v.label = v.triggered.empty() ? 0 : 1;
    v.score = v.label == 1 ? max_triggered : min_all;
    return v;
}

DetectorModel fit_global(const Dataset& dataset, const RowSet& train, const CorrDetConfig& cfg) {
    cfg.validate();
    DetectorModel model;
    model.indices = dataset.schema.regular_indices();
    const RowSet normals = normal_rows(dataset, train);
    if (normals.size() == train.size()) {
        spdlog::warn("training rows hold no attacks; threshold falls back to eta = {}", cfg.eta_default);
    }
    train_detector(model, dataset, train, normals, cfg);
    spdlog::info("global CorrDet: dim {}, {} normal rows, covariance condition number {:.3g}", model.dimension(),
                 normals.size(), model.condition);
    return model;
}

DetectionScores run_ecd(EnsembleModel model, const Dataset& dataset, const RowSet& rows, const CorrDetConfig& cfg,
                        std::size_t workers) {
    DetectionScores out;
    out.score.resize(rows.size());
    out.label.resize(rows.size());
    out.triggered.resize(rows.size());
    const auto classify = [&](std::size_t k) {
        auto v = ecd_classify(model, dataset.samples[rows[k]].z);
        out.score[k] = v.score;
        out.label[k] = v.label;
        out.triggered[k] = std::move(v.triggered);
    };
    if (!cfg.adaptive) {
        parallel_for(rows.size(), workers, classify);
        return out;
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
        classify(k);
        if (out.label[k] == 0) {
            const Vector& z = dataset.samples[rows[k]].z;
            for (auto& local : model.locals) {
                update_detector(local, local.gather(z), cfg.forgetting);
            }
        }
    }
    return out;
}

DetectionScores run_corrdet_global(DetectorModel model, const Dataset& dataset, const RowSet& rows,
                                   const CorrDetConfig& cfg, std::size_t workers) {
    DetectionScores out;
    out.score.resize(rows.size());
    out.label.resize(rows.size());
    const auto classify = [&](std::size_t k) {
        out.score[k] = corrdet_distance(model, model.gather(dataset.samples[rows[k]].z));
        out.label[k] = out.score[k] >= model.tau ? 1 : 0;
    };
    if (!cfg.adaptive) {
        parallel_for(rows.size(), workers, classify);
        return out;
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
        classify(k);
        if (out.label[k] == 0) {
            update_detector(model, model.gather(dataset.samples[rows[k]].z), cfg.forgetting);
        }
    }
    return out;
}

}  // namespace gridshield
