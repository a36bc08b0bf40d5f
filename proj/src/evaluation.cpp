#include "gridshield/evaluation.hpp"

#include "gridshield/io.hpp"
#include "gridshield/parallel.hpp"
#include "gridshield/random.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace gridshield {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// ROC

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw ValidationError("score and label counts differ");
    }
    std::size_t positives = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (std::isnan(scores[k])) {
            throw ValidationError("ROC scores must not be NaN");
        }
        positives += labels[k] == 1 ? 1 : 0;
    }
    const std::size_t negatives = scores.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw ValidationError("ROC needs both classes in the labels");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.fpr.push_back(0.0);
    roc.tpr.push_back(0.0);
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double s = scores[order[k]];
        for (; k < order.size() && scores[order[k]] == s; ++k) {
            (labels[order[k]] == 1 ? tp : fp) += 1;
        }
        roc.fpr.push_back(static_cast<double>(fp) / static_cast<double>(negatives));
        roc.tpr.push_back(static_cast<double>(tp) / static_cast<double>(positives));
    }
    roc.auc = partial_auc(roc, 1.0);
    roc.auc_trunc = partial_auc(roc, kTruncatedFpr) / kTruncatedFpr;
    return roc;
}

double partial_auc(const RocCurve& roc, double max_fpr) {
    double area = 0.0;
    for (std::size_t k = 1; k < roc.fpr.size(); ++k) {
        const double x0 = roc.fpr[k - 1];
        const double x1 = roc.fpr[k];
        const double y0 = roc.tpr[k - 1];
        const double y1 = roc.tpr[k];
        if (x0 >= max_fpr) {
            break;
        }
        if (x1 <= max_fpr) {
            area += 0.5 * (x1 - x0) * (y0 + y1);
        } else {
            const double y = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
            area += 0.5 * (max_fpr - x0) * (y0 + y);
            break;
        }
    }
    return area;
}

std::vector<double> fpr_grid(std::size_t points) {
    if (points < 2) {
        throw ValidationError("an fpr grid needs at least 2 points");
    }
    std::vector<double> grid(points);
    for (std::size_t k = 0; k < points; ++k) {
        grid[k] = static_cast<double>(k) / static_cast<double>(points - 1);
    }
    return grid;
}

std::vector<double> tpr_at(const RocCurve& roc, const std::vector<double>& grid) {
    std::vector<double> out(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double f = grid[g];
        const auto up = std::upper_bound(roc.fpr.begin(), roc.fpr.end(), f);
        if (up == roc.fpr.begin()) {
            out[g] = 0.0;
            continue;
        }
        const auto j = static_cast<std::size_t>(up - roc.fpr.begin());
        const auto i = j - 1;
        if (j == roc.fpr.size()) {
            out[g] = roc.tpr[i];
        } else {
            const double w = (f - roc.fpr[i]) / (roc.fpr[j] - roc.fpr[i]);
            out[g] = roc.tpr[i] + w * (roc.tpr[j] - roc.tpr[i]);
        }
    }
    return out;
}

MeanRoc vertical_average(const std::vector<RocCurve>& curves, std::size_t points) {
    if (curves.empty()) {
        throw ValidationError("cannot average zero ROC curves");
    }
    MeanRoc mean;
    mean.fpr = fpr_grid(points);
    mean.tpr.assign(points, 0.0);
    mean.tpr_min.assign(points, std::numeric_limits<double>::infinity());
    mean.tpr_max.assign(points, -std::numeric_limits<double>::infinity());
    for (const auto& c : curves) {
        const auto t = tpr_at(c, mean.fpr);
        for (std::size_t g = 0; g < points; ++g) {
            mean.tpr[g] += t[g];
            mean.tpr_min[g] = std::min(mean.tpr_min[g], t[g]);
            mean.tpr_max[g] = std::max(mean.tpr_max[g], t[g]);
        }
    }
    for (auto& v : mean.tpr) {
        v /= static_cast<double>(curves.size());
    }
    for (std::size_t g = 1; g < points; ++g) {
        mean.auc += 0.5 * (mean.fpr[g] - mean.fpr[g - 1]) * (mean.tpr[g] + mean.tpr[g - 1]);
    }
    return mean;
}

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(Method m) {
    switch (m) {
    case Method::Se:
        return "se";
    case Method::Ecd:
        return "ecd";
    case Method::CorrDet:
        return "corrdet";
    case Method::Fusion:
        return "fusion";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    for (const auto m : all_methods()) {
        if (to_string(m) == s) {
            return m;
        }
    }
    throw ValidationError("unknown method '" + s + "' (valid: se, ecd, corrdet, fusion)");
}

std::vector<Method> all_methods() { return {Method::Se, Method::Ecd, Method::CorrDet, Method::Fusion}; }

void EvalConfig::validate() const {
    if (repeats < 1) {
        throw ValidationError("repeats must be >= 1");
    }
    if (!(train_frac > 0.0 && train_frac < 1.0)) {
        throw ValidationError("train_frac must lie in (0, 1)");
    }
    if (methods.empty()) {
        throw ValidationError("at least one method is required");
    }
    for (std::size_t i = 0; i < methods.size(); ++i) {
        if (std::find(methods.begin() + static_cast<std::ptrdiff_t>(i) + 1, methods.end(), methods[i]) !=
            methods.end()) {
            throw ValidationError("method " + to_string(methods[i]) + " listed twice");
        }
    }
}

nlohmann::json EvalConfig::to_json() const {
    std::vector<std::string> names;
    for (const auto m : methods) {
        names.push_back(to_string(m));
    }
    return {{"repeats", repeats},
            {"train_frac", train_frac},
            {"split_seed", split_seed},
            {"block_split", block_split},
            {"normalize_on_normals", normalize_on_normals},
            {"methods", names}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
    EvalConfig c;
    if (!j.contains("split_seed")) {
        throw ValidationError("eval config needs an explicit split_seed");
    }
    c.split_seed = j.at("split_seed").get<std::uint64_t>();
    c.repeats = j.value("repeats", c.repeats);
    c.train_frac = j.value("train_frac", c.train_frac);
    c.block_split = j.value("block_split", c.block_split);
    c.normalize_on_normals = j.value("normalize_on_normals", c.normalize_on_normals);
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& name : j.at("methods")) {
            c.methods.push_back(method_from_string(name.get<std::string>()));
        }
    }
    c.validate();
    return c;
}

Split make_split(std::size_t samples, const EvalConfig& cfg, std::size_t repeat) {
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_frac * static_cast<double>(samples)));
    if (n_train < 1 || n_train >= samples) {
        throw ValidationError("train_frac " + std::to_string(cfg.train_frac) + " leaves an empty side on " +
                              std::to_string(samples) + " samples");
    }
    Rng rng = make_stream(cfg.split_seed, repeat, kSplitStream);
    Split split;
    if (cfg.block_split) {
        std::uniform_int_distribution<std::size_t> start_dist(0, samples - n_train);
        const std::size_t start = start_dist(rng);
        for (std::size_t t = 0; t < samples; ++t) {
            (t >= start && t < start + n_train ? split.train : split.test).push_back(t);
        }
        return split;
    }
    std::vector<std::size_t> perm(samples);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    split.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

struct RepeatOutput {
    std::map<Method, RocCurve> roc;
    std::map<Method, double> f1;
};

bool uses(const EvalConfig& cfg, Method m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
}

template <typename T>
std::vector<T> pick(const std::vector<T>& values, const RowSet& rows) {
    std::vector<T> out;
    out.reserve(rows.size());
    for (const auto r : rows) {
        out.push_back(values[r]);
    }
    return out;
}

double label_f1(const std::vector<int>& predicted, const std::vector<int>& truth) {
    std::vector<double> as_scores(predicted.begin(), predicted.end());
    return f1_score(as_scores, truth, 0.5);
}

std::string fnv1a(const std::string& text) {
    std::uint64_t h = 14695981039346656037ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void evaluate_repeat(const Dataset& dataset, const std::vector<int>& labels, const SeScores* se,
                     const ExperimentReport& report, std::size_t inner_workers, RepeatRecord& rec,
                     RepeatOutput& out) {
    const auto& eval = report.eval;
    const auto split = make_split(dataset.size(), eval, rec.repeat);
    rec.train_rows = split.train.size();
    rec.test_rows = split.test.size();
    const auto train_labels = pick(labels, split.train);
    const auto test_labels = pick(labels, split.test);
    rec.train_attacked = static_cast<std::size_t>(std::count(train_labels.begin(), train_labels.end(), 1));
    rec.test_attacked = static_cast<std::size_t>(std::count(test_labels.begin(), test_labels.end(), 1));
    rec.details = nlohmann::json::object();

    if (uses(eval, Method::Se)) {
        out.roc[Method::Se] = roc_curve(pick(se->psi, split.test), test_labels);
        out.f1[Method::Se] = label_f1(pick(se->flag, split.test), test_labels);
    }

    if (uses(eval, Method::Ecd) || uses(eval, Method::Fusion)) {
        const auto ensemble = fit_ensemble(dataset, split.train, report.corrdet, inner_workers);
        CorrDetConfig frozen = report.corrdet;
        frozen.adaptive = false;
        const auto train_scores = run_ecd(ensemble, dataset, split.train, frozen, inner_workers);
        const auto test_scores = run_ecd(ensemble, dataset, split.test, report.corrdet, inner_workers);
        std::vector<double> etas;
        for (const auto& local : ensemble.locals) {
            etas.push_back(local.eta);
        }
        rec.details["ecd"] = {{"locals", ensemble.locals.size()}, {"eta", etas}};
        if (uses(eval, Method::Ecd)) {
            out.roc[Method::Ecd] = roc_curve(test_scores.score, test_labels);
            out.f1[Method::Ecd] = label_f1(test_scores.label, test_labels);
        }
        if (uses(eval, Method::Fusion)) {
            std::vector<double> ecd_all(dataset.size(), 0.0);
            for (std::size_t k = 0; k < split.train.size(); ++k) {
                ecd_all[split.train[k]] = train_scores.score[k];
            }
            for (std::size_t k = 0; k < split.test.size(); ++k) {
                ecd_all[split.test[k]] = test_scores.score[k];
            }
            RowSet norm_rows;
            for (const auto r : split.train) {
                if (!eval.normalize_on_normals || labels[r] == 0) {
                    norm_rows.push_back(r);
                }
            }
            const auto fused = fuse_scores(se->psi, ecd_all, norm_rows);
            const auto choice = fusion_threshold(pick(fused.fused, split.train), train_labels,
                                                 report.corrdet.eta_grid, report.corrdet.eta_default);
            const auto test_fused = pick(fused.fused, split.test);
            out.roc[Method::Fusion] = roc_curve(test_fused, test_labels);
            out.f1[Method::Fusion] = f1_score(test_fused, test_labels, choice.tau);
            rec.details["fusion"] = {{"se", fused.se.to_json()},
                                     {"ecd", fused.ecd.to_json()},
                                     {"tau", choice.tau},
                                     {"eta", choice.eta},
                                     {"train_f1", choice.f1}};
        }
    }

    if (uses(eval, Method::CorrDet)) {
        const auto global = fit_global(dataset, split.train, report.corrdet);
        const auto scores = run_corrdet_global(global, dataset, split.test, report.corrdet, inner_workers);
        out.roc[Method::CorrDet] = roc_curve(scores.score, test_labels);
        out.f1[Method::CorrDet] = label_f1(scores.label, test_labels);
        rec.details["corrdet"] = {{"tau", global.tau},
                                  {"eta", global.eta},
                                  {"ridge", global.ridge},
                                  {"condition", global.condition}};
    }
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

ExperimentReport run_experiment(const Dataset& dataset, const EvalConfig& eval, const WlsConfig& wls,
                                const CorrDetConfig& corrdet, std::size_t workers, const SeScores* se) {
    eval.validate();
    wls.validate();
    corrdet.validate();
    if (workers == 0) {
        workers = default_workers();
    }
    ExperimentReport report;
    report.eval = eval;
    report.wls = wls;
    report.corrdet = corrdet;
    report.samples = dataset.size();
    report.dimension = dataset.dimension();

    const nlohmann::json identity = {{"eval", eval.to_json()},
                                     {"wls", wls.to_json()},
                                     {"corrdet", corrdet.to_json()},
                                     {"case", dataset.meta.case_name},
                                     {"samples", dataset.size()},
                                     {"dimension", dataset.dimension()},
                                     {"load_seed", dataset.meta.load_seed},
                                     {"noise_seed", dataset.meta.noise_seed},
                                     {"attack", dataset.meta.attack.to_json()}};
    report.config_digest = fnv1a(identity.dump());

    SeScores own;
    if (uses(eval, Method::Se) || uses(eval, Method::Fusion)) {
        if (se == nullptr) {
            spdlog::info("running state estimation on {} samples", dataset.size());
            own = run_se_detector(dataset, wls, workers);
            se = &own;
        }
        if (se->psi.size() != dataset.size()) {
            throw ValidationError("SE scores do not match the dataset length");
        }
        report.se_failures = static_cast<std::size_t>(std::count(se->converged.begin(), se->converged.end(), 0));
    }

    const auto labels = dataset.labels();
    const std::size_t outer = std::min(workers, eval.repeats);
    const std::size_t inner = std::max<std::size_t>(1, workers / outer);
    report.repeats.resize(eval.repeats);
    std::vector<RepeatOutput> outputs(eval.repeats);
    parallel_for(eval.repeats, outer, [&](std::size_t r) {
        auto& rec = report.repeats[r];
        rec.repeat = r;
        try {
            evaluate_repeat(dataset, labels, se, report, inner, rec, outputs[r]);
            rec.ok = true;
        } catch (const std::exception& e) {
            rec.ok = false;
            rec.error = e.what();
            outputs[r] = {};
        }
    });

    std::size_t completed = 0;
    for (const auto& rec : report.repeats) {
        if (rec.ok) {
            ++completed;
        } else {
            spdlog::warn("evaluation repeat {} failed and is excluded: {}", rec.repeat, rec.error);
            report.partial = true;
        }
    }
    if (completed == 0) {
        throw Error("every evaluation repeat failed; first error: " + report.repeats.front().error);
    }

    for (const auto m : eval.methods) {
        MethodSummary s;
        for (std::size_t r = 0; r < eval.repeats; ++r) {
            if (!report.repeats[r].ok) {
                continue;
            }
            const auto& roc = outputs[r].roc.at(m);
            s.curves.push_back(roc);
            s.auc.push_back(roc.auc);
            s.auc_trunc.push_back(roc.auc_trunc);
            s.f1.push_back(outputs[r].f1.at(m));
        }
        s.mean_auc = mean_of(s.auc);
        s.mean_auc_trunc = mean_of(s.auc_trunc);
        s.mean_f1 = mean_of(s.f1);
        if (s.auc.size() > 1) {
            double ss = 0.0;
            for (const double a : s.auc) {
                ss += (a - s.mean_auc) * (a - s.mean_auc);
            }
            s.std_auc = std::sqrt(ss / static_cast<double>(s.auc.size() - 1));
        }
        s.mean_roc = vertical_average(s.curves);
        spdlog::info("{}: mean AUC {:.4f} (sd {:.4f}), truncated {:.4f}, F1 {:.4f}", to_string(m), s.mean_auc,
                     s.std_auc, s.mean_auc_trunc, s.mean_f1);
        report.methods.emplace(m, std::move(s));
    }
    return report;
}

nlohmann::json ExperimentReport::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["config_digest"] = config_digest;
    j["partial"] = partial;
    j["config"] = {{"eval", eval.to_json()}, {"wls", wls.to_json()}, {"corrdet", corrdet.to_json()}};
    j["dataset"] = {{"samples", samples}, {"dimension", dimension}};
    j["normalization"] = eval.normalize_on_normals ? "normal training rows" : "training rows";
    j["se_failures"] = se_failures;

    nlohmann::json reps = nlohmann::json::array();
    for (const auto& r : repeats) {
        reps.push_back({{"repeat", r.repeat},
                        {"split_stream", {{"seed", eval.split_seed}, {"index", r.repeat}}},
                        {"ok", r.ok},
                        {"error", r.error},
                        {"train_rows", r.train_rows},
                        {"test_rows", r.test_rows},
                        {"train_attacked", r.train_attacked},
                        {"test_attacked", r.test_attacked},
                        {"details", r.details}});
    }
    j["repeats"] = reps;

    nlohmann::json ms = nlohmann::json::object();
    for (const auto& [m, s] : methods) {
        ms[to_string(m)] = {{"auc", s.auc},
                            {"auc_trunc", s.auc_trunc},
                            {"f1", s.f1},
                            {"mean_auc", s.mean_auc},
                            {"std_auc", s.std_auc},
                            {"mean_auc_trunc", s.mean_auc_trunc},
                            {"mean_f1", s.mean_f1},
                            {"mean_roc_auc", s.mean_roc.auc}};
    }
    j["methods"] = ms;

    const auto se_it = methods.find(Method::Se);
    const auto fu_it = methods.find(Method::Fusion);
    if (se_it != methods.end() && fu_it != methods.end()) {
        const auto& a = se_it->second;
        const auto& b = fu_it->second;
        j["fusion_vs_se"] = {{"auc_relative", (b.mean_auc - a.mean_auc) / a.mean_auc},
                             {"auc_trunc_relative", (b.mean_auc_trunc - a.mean_auc_trunc) / a.mean_auc_trunc}};
    }
    return j;
}

namespace {

std::string curve_csv(const std::vector<double>& fpr, const std::vector<double>& tpr,
                      const std::vector<double>* lo = nullptr, const std::vector<double>* hi = nullptr) {
    std::string out = lo != nullptr ? "fpr,tpr,tpr_min,tpr_max\n" : "fpr,tpr\n";
    for (std::size_t k = 0; k < fpr.size(); ++k) {
        append_double(out, fpr[k]);
        out += ',';
        append_double(out, tpr[k]);
        if (lo != nullptr) {
            out += ',';
            append_double(out, (*lo)[k]);
            out += ',';
            append_double(out, (*hi)[k]);
        }
        out += '\n';
    }
    return out;
}

}  // namespace

void write_report(const ExperimentReport& report, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
    }
    for (const auto& [m, s] : report.methods) {
        const fs::path sub = dir / to_string(m);
        fs::create_directories(sub, ec);
        if (ec) {
            throw IoError("cannot create " + sub.string() + ": " + ec.message());
        }
        write_file(sub / "roc_mean.csv",
                   curve_csv(s.mean_roc.fpr, s.mean_roc.tpr, &s.mean_roc.tpr_min, &s.mean_roc.tpr_max));
        std::size_t k = 0;
        for (const auto& rec : report.repeats) {
            if (!rec.ok) {
                continue;
            }
            const auto& c = s.curves[k++];
            write_file(sub / ("roc_repeat_" + std::to_string(rec.repeat) + ".csv"), curve_csv(c.fpr, c.tpr));
        }
    }
    write_file(dir / "report.json", report.to_json().dump(2) + "\n");
}

}  // namespace gridshield
