#include "gridshield/config.hpp"
#include "gridshield/corrdet.hpp"
#include "gridshield/estimation.hpp"
#include "gridshield/evaluation.hpp"
#include "gridshield/fusion.hpp"
#include "gridshield/io.hpp"
#include "gridshield/powerflow.hpp"
#include "gridshield/scenario.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gridshield;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Bad flags, missing inputs and invalid configs. Maps to exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    std::string out;
    std::size_t workers = 0;
    std::string log_level = "info";

    std::string case_path;
    std::optional<std::size_t> samples;
    std::optional<std::uint64_t> seed;
    bool clean = false;

    std::string dataset;
    std::string method;
    std::optional<std::uint64_t> split_seed;
    std::string rows = "test";
    std::string model;
    std::string se_scores;
    std::string methods;
    std::optional<std::size_t> repeats;
};

void require_file(const std::string& path, const char* what) {
    if (path.empty()) {
        throw UsageError(std::string("missing ") + what);
    }
    if (!fs::is_regular_file(path)) {
        throw UsageError(std::string(what) + " not found: " + path);
    }
}

void require_out(const Options& o) {
    if (o.out.empty()) {
        throw UsageError("--out is required");
    }
}

/// Config settings, or defaults when no config file was given. Flag overrides
/// are applied on top.
RunConfig run_config(const Options& o, bool need_case) {
    RunConfig cfg;
    if (!o.config.empty()) {
        require_file(o.config, "config file");
        if (!o.case_path.empty()) {
            nlohmann::json j = nlohmann::json::parse(read_file(o.config), nullptr, false);
            if (j.is_discarded()) {
                throw ValidationError(o.config + ": not valid JSON");
            }
            j["case"] = fs::absolute(o.case_path).string();
            cfg = RunConfig::from_json(j, fs::path(o.config).parent_path());
        } else {
            cfg = load_run_config(o.config);
        }
    } else if (need_case) {
        throw UsageError("--config is required (seeds must be set in the config file)");
    } else {
        cfg.eval.split_seed = 0;
    }
    if (o.samples) {
        cfg.samples = *o.samples;
    }
    if (o.seed) {
        cfg.load_seed = *o.seed;
        cfg.noise_seed = *o.seed + 1;
        cfg.attack.seed = *o.seed + 2;
        cfg.eval.split_seed = *o.seed + 3;
    }
    if (o.split_seed) {
        cfg.eval.split_seed = *o.split_seed;
    }
    if (o.repeats) {
        cfg.eval.repeats = *o.repeats;
    }
    if (!o.methods.empty()) {
        cfg.eval.methods.clear();
        std::stringstream ss(o.methods);
        for (std::string name; std::getline(ss, name, ',');) {
            cfg.eval.methods.push_back(method_from_string(name));
        }
    }
    if (need_case) {
        cfg.validate();
    } else {
        cfg.eval.validate();
        cfg.wls.validate();
        cfg.corrdet.validate();
    }
    return cfg;
}

Dataset open_dataset(const Options& o) {
    require_file(o.dataset, "--dataset");
    require_file(sidecar_path(o.dataset).string(), "dataset sidecar");
    return load_dataset(o.dataset);
}

RowSet all_rows(std::size_t n) {
    RowSet rows(n);
    for (std::size_t k = 0; k < n; ++k) {
        rows[k] = k;
    }
    return rows;
}

/// Rows written by detect and fuse: the test rows of split repeat 0, or every row.
RowSet output_rows(const Options& o, const Dataset& ds, const EvalConfig& eval) {
    if (o.rows == "all") {
        return all_rows(ds.size());
    }
    return make_split(ds.size(), eval, 0).test;
}

std::string join(const std::vector<int>& values, char sep) {
    std::string s;
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (k) {
            s += sep;
        }
        s += std::to_string(values[k]);
    }
    return s;
}

int cmd_generate(const Options& o) {
    require_out(o);
    const RunConfig cfg = run_config(o, true);
    const NetworkCase network = load_case(cfg.case_path.string());
    const MeasurementSchema schema = build_schema(network, cfg.metering);
    GenerateOptions gen{cfg.ou, cfg.noise, cfg.load_seed, cfg.noise_seed, {}, o.workers};
    const Dataset ds =
        o.clean ? gen_clean_dataset(network, schema, gen_loads(network, cfg.ou, cfg.samples, cfg.load_seed), gen)
                : gen_dataset(network, schema, cfg.samples, gen, cfg.attack);
    save_dataset(ds, o.out);

    std::size_t attacked = 0;
    for (const auto& s : ds.samples) {
        attacked += s.label;
    }
    std::printf("samples %zu\n", ds.size());
    std::printf("dimension %zu\n", ds.dimension());
    std::printf("anomaly rate %.4f (%zu attacked)\n", static_cast<double>(attacked) / static_cast<double>(ds.size()),
                attacked);
    std::printf("sigma floor hits %zu\n", ds.meta.floor_hits);
    std::printf("load clamp hits %zu\n", ds.meta.clamp_hits);
    return 0;
}

int cmd_attack(const Options& o) {
    require_out(o);
    const RunConfig cfg = run_config(o, false);
    if (o.config.empty()) {
        throw UsageError("--config is required (attack seed must be set in the config file)");
    }
    Dataset ds = open_dataset(o);
    if (ds.meta.attacked) {
        throw UsageError(o.dataset + " already holds attacks");
    }
    ds = inject_attacks(std::move(ds), cfg.attack);
    save_dataset(ds, o.out);
    std::size_t attacked = 0;
    for (const auto& s : ds.samples) {
        attacked += s.label;
    }
    std::printf("samples %zu\n", ds.size());
    std::printf("anomaly rate %.4f (%zu attacked)\n", static_cast<double>(attacked) / static_cast<double>(ds.size()),
                attacked);
    return 0;
}

int detect_se(const Options& o, const Dataset& ds, const RunConfig& cfg, const RowSet& rows) {
    const SeScores se = run_se_detector(ds, cfg.wls, o.workers);
    std::size_t failed = 0;
    std::string csv = "t,psi_se,flag,converged,iterations\n";
    for (const auto r : rows) {
        failed += se.converged[r] == 0;
        csv += std::to_string(ds.samples[r].t);
        csv += ',';
        append_double(csv, se.psi[r]);
        csv += ',' + std::to_string(se.flag[r]) + ',' + std::to_string(se.converged[r]) + ',' +
               std::to_string(se.iterations[r]) + '\n';
    }
    if (failed > 0) {
        spdlog::warn("{} of {} samples did not converge; scored with the sentinel", failed, rows.size());
    }
    write_file(o.out, csv);
    std::printf("wrote %zu SE scores (chi-square threshold %.6g)\n", rows.size(), se.threshold);
    return 0;
}

int detect_corrdet(const Options& o, const Dataset& ds, const RunConfig& cfg, const RowSet& rows, bool ensemble) {
    const Split split = make_split(ds.size(), cfg.eval, 0);
    std::string csv;
    std::string model_json;
    if (ensemble) {
        const EnsembleModel model = fit_ensemble(ds, split.train, cfg.corrdet, o.workers);
        const DetectionScores scores = run_ecd(model, ds, rows, cfg.corrdet, o.workers);
        csv = "t,psi_ecd,label,triggered_buses\n";
        for (std::size_t k = 0; k < rows.size(); ++k) {
            csv += std::to_string(ds.samples[rows[k]].t) + ',';
            append_double(csv, scores.score[k]);
            csv += ',' + std::to_string(scores.label[k]) + ',' + join(scores.triggered[k], ';') + '\n';
        }
        model_json = model.to_json().dump(1) + "\n";
    } else {
        const DetectorModel model = fit_global(ds, split.train, cfg.corrdet);
        const DetectionScores scores = run_corrdet_global(model, ds, rows, cfg.corrdet, o.workers);
        csv = "t,psi_corrdet,label\n";
        for (std::size_t k = 0; k < rows.size(); ++k) {
            csv += std::to_string(ds.samples[rows[k]].t) + ',';
            append_double(csv, scores.score[k]);
            csv += ',' + std::to_string(scores.label[k]) + '\n';
        }
        model_json = model.to_json().dump(1) + "\n";
    }
    if (!o.model.empty()) {
        write_file(o.model, model_json);
    }
    write_file(o.out, csv);
    std::printf("wrote %zu %s scores (trained on %zu rows)\n", rows.size(), ensemble ? "ECD" : "CorrDet",
                split.train.size());
    return 0;
}

int cmd_detect(const Options& o) {
    require_out(o);
    const Method method = method_from_string(o.method);
    if (method == Method::Fusion) {
        throw UsageError("use the fuse command for fusion scores");
    }
    const RunConfig cfg = run_config(o, false);
    if (o.config.empty() && !o.split_seed && !o.seed && method != Method::Se) {
        throw UsageError("--split-seed or --config is required");
    }
    const Dataset ds = open_dataset(o);
    const RowSet rows = output_rows(o, ds, cfg.eval);
    switch (method) {
    case Method::Se:
        return detect_se(o, ds, cfg, rows);
    case Method::Ecd:
        return detect_corrdet(o, ds, cfg, rows, true);
    default:
        return detect_corrdet(o, ds, cfg, rows, false);
    }
}

/// psi_se by sample time from a `detect --method se --rows all` CSV.
std::vector<double> read_se_scores(const std::string& path, const Dataset& ds) {
    require_file(path, "--se-scores");
    std::map<std::size_t, double> by_t;
    std::stringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    if (line.rfind("t,psi_se", 0) != 0) {
        throw ValidationError(path + ": expected a t,psi_se,... header");
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos) {
            throw ValidationError(path + ": malformed row '" + line + "'");
        }
        const std::size_t t = std::stoull(line.substr(0, c1));
        const std::string v = line.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1);
        by_t[t] = v == "inf" ? kSeSentinel : std::stod(v);
    }
    std::vector<double> psi(ds.size());
    for (std::size_t r = 0; r < ds.size(); ++r) {
        const auto it = by_t.find(ds.samples[r].t);
        if (it == by_t.end()) {
            throw UsageError(path + " has no score for t = " + std::to_string(ds.samples[r].t) +
                             " (write it with --rows all)");
        }
        psi[r] = it->second;
    }
    return psi;
}

int cmd_fuse(const Options& o) {
    require_out(o);
    const RunConfig cfg = run_config(o, false);
    if (o.config.empty() && !o.split_seed && !o.seed) {
        throw UsageError("--split-seed or --config is required");
    }
    const Dataset ds = open_dataset(o);
    const std::vector<double> se =
        o.se_scores.empty() ? run_se_detector(ds, cfg.wls, o.workers).psi : read_se_scores(o.se_scores, ds);

    const Split split = make_split(ds.size(), cfg.eval, 0);
    const EnsembleModel ensemble = fit_ensemble(ds, split.train, cfg.corrdet, o.workers);
    CorrDetConfig frozen = cfg.corrdet;
    frozen.adaptive = false;
    const auto train_scores = run_ecd(ensemble, ds, split.train, frozen, o.workers);
    const auto test_scores = run_ecd(ensemble, ds, split.test, cfg.corrdet, o.workers);
    std::vector<double> ecd(ds.size(), 0.0);
    for (std::size_t k = 0; k < split.train.size(); ++k) {
        ecd[split.train[k]] = train_scores.score[k];
    }
    for (std::size_t k = 0; k < split.test.size(); ++k) {
        ecd[split.test[k]] = test_scores.score[k];
    }

    const auto labels = ds.labels();
    RowSet norm_rows;
    std::vector<int> train_labels;
    for (const auto r : split.train) {
        train_labels.push_back(labels[r]);
        if (!cfg.eval.normalize_on_normals || labels[r] == 0) {
            norm_rows.push_back(r);
        }
    }
    const FusionScores fused = fuse_scores(se, ecd, norm_rows);
    std::vector<double> train_fused;
    for (const auto r : split.train) {
        train_fused.push_back(fused.fused[r]);
    }
    const ThresholdChoice choice =
        fusion_threshold(train_fused, train_labels, cfg.corrdet.eta_grid, cfg.corrdet.eta_default);

    const RowSet rows = output_rows(o, ds, cfg.eval);
    std::string csv = "t,psi_se,psi_ecd,psi_fusion,label\n";
    for (const auto r : rows) {
        csv += std::to_string(ds.samples[r].t) + ',';
        append_double(csv, se[r]);
        csv += ',';
        append_double(csv, ecd[r]);
        csv += ',';
        append_double(csv, fused.fused[r]);
        csv += ',' + std::to_string(fused.fused[r] >= choice.tau ? 1 : 0) + '\n';
    }
    const nlohmann::json meta = {
        {"normalization", cfg.eval.normalize_on_normals ? "normal training rows" : "training rows"},
        {"train_rows", split.train.size()},
        {"se", fused.se.to_json()},
        {"ecd", fused.ecd.to_json()},
        {"tau", choice.tau},
        {"eta", choice.eta},
        {"mu_thr", choice.mu_thr},
        {"sigma_thr", choice.sigma_thr},
        {"train_f1", choice.f1},
        {"fallback", choice.fallback}};
    write_file(o.out + ".json", meta.dump(2) + "\n");
    write_file(o.out, csv);
    std::printf("wrote %zu fused scores (tau %.6g)\n", rows.size(), choice.tau);
    return 0;
}

int cmd_eval(const Options& o) {
    require_out(o);
    const RunConfig cfg = run_config(o, false);
    if (o.config.empty() && !o.split_seed && !o.seed) {
        throw UsageError("--seed or --config is required");
    }
    const Dataset ds = open_dataset(o);
    const ExperimentReport report = run_experiment(ds, cfg.eval, cfg.wls, cfg.corrdet, o.workers);
    write_report(report, o.out);
    for (const auto& [method, summary] : report.methods) {
        std::printf("%-8s mean AUC %.4f (std %.4f)  truncated %.4f  F1 %.4f\n", to_string(method).c_str(),
                    summary.mean_auc, summary.std_auc, summary.mean_auc_trunc, summary.mean_f1);
    }
    if (report.partial) {
        std::printf("report is partial: some repeats failed\n");
    }
    return 0;
}

/// Solved base-load power flow as JSON, for debugging a case file.
int cmd_inspect(const Options& o) {
    std::string path = o.case_path;
    if (path.empty() && !o.config.empty()) {
        path = load_run_config(o.config).case_path.string();
    }
    require_file(path, "--case");
    const NetworkCase network = load_case(path);
    const PowerFlowResult pf = solve_powerflow(network, base_loads(network));
    nlohmann::json buses = nlohmann::json::array();
    for (std::size_t i = 0; i < network.buses().size(); ++i) {
        buses.push_back({{"bus", network.buses()[i].id}, {"vm", pf.state.vmags[static_cast<Eigen::Index>(i)]},
                         {"va", pf.state.angles[static_cast<Eigen::Index>(i)]}});
    }
    const nlohmann::json j = {{"case", network.name()},
                              {"buses", network.buses().size()},
                              {"branches", network.branches().size()},
                              {"iterations", pf.iterations},
                              {"mismatch", pf.mismatch},
                              {"state", buses}};
    const std::string text = j.dump(2) + "\n";
    if (o.out.empty()) {
        std::fputs(text.c_str(), stdout);
    } else {
        write_file(o.out, text);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("gridshield");
    spdlog::set_default_logger(logger);

    CLI::App app{"Power grid FDI detection: data generation, detectors, fusion and evaluation"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "Run configuration (JSON)");
    app.add_option("--out", o.out, "Output file or directory");
    app.add_option("--workers", o.workers, "Worker threads, 0 = hardware concurrency");
    app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error, off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

    auto* generate = app.add_subcommand("generate", "Generate a measurement dataset");
    generate->add_option("--case", o.case_path, "MATPOWER case file (overrides the config)");
    generate->add_option("--samples", o.samples, "Number of samples (overrides the config)");
    generate->add_option("--seed", o.seed, "Base seed; overrides all config seeds");
    generate->add_flag("--clean", o.clean, "Do not inject attacks");

    auto* attack = app.add_subcommand("attack", "Inject attacks into a clean dataset");
    attack->add_option("--dataset", o.dataset, "Clean dataset CSV")->required();

    auto* detect = app.add_subcommand("detect", "Score a dataset with one detector");
    detect->add_option("--method", o.method, "se, ecd or corrdet")->required();
    detect->add_option("--dataset", o.dataset, "Dataset CSV")->required();
    detect->add_option("--split-seed", o.split_seed, "Train/test split seed (overrides the config)");
    detect->add_option("--rows", o.rows, "Rows to score: test (split repeat 0) or all")
        ->check(CLI::IsMember({"test", "all"}));
    detect->add_option("--model", o.model, "Write the trained CorrDet model here (JSON)");

    auto* fuse = app.add_subcommand("fuse", "Fused SE + ECD scores");
    fuse->add_option("--dataset", o.dataset, "Dataset CSV")->required();
    fuse->add_option("--se-scores", o.se_scores, "SE scores from detect --rows all; computed if absent");
    fuse->add_option("--split-seed", o.split_seed, "Train/test split seed (overrides the config)");
    fuse->add_option("--rows", o.rows, "Rows to write: test (split repeat 0) or all")
        ->check(CLI::IsMember({"test", "all"}));

    auto* eval = app.add_subcommand("eval", "Repeated train/test evaluation and ROC report");
    eval->add_option("--dataset", o.dataset, "Dataset CSV")->required();
    eval->add_option("--methods", o.methods, "Comma-separated subset of se,ecd,corrdet,fusion");
    eval->add_option("--repeats", o.repeats, "Number of random splits");
    eval->add_option("--seed", o.split_seed, "Split seed (overrides the config)");

    auto* inspect = app.add_subcommand("inspect", "Solve a case at base load and print the state as JSON");
    inspect->add_option("--case", o.case_path, "MATPOWER case file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }
    spdlog::set_level(spdlog::level::from_str(o.log_level));

    try {
        if (*generate) {
            return cmd_generate(o);
        }
        if (*attack) {
            return cmd_attack(o);
        }
        if (*detect) {
            return cmd_detect(o);
        }
        if (*fuse) {
            return cmd_fuse(o);
        }
        if (*eval) {
            return cmd_eval(o);
        }
        return cmd_inspect(o);
    } catch (const UsageError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const ValidationError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const ParseError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitRuntime;
    }
}
