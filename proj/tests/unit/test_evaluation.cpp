#include "test_support.hpp"

#include "gridshield/evaluation.hpp"
#include "gridshield/io.hpp"
#include "gridshield/random.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>

using namespace gridshield;
using namespace gridshield::testing;

namespace fs = std::filesystem;

namespace {

// Probability that a random positive outscores a random negative, ties 1/2.
double concordance(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[i] == 1 && labels[j] == 0) {
                pairs += 1.0;
                wins += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
            }
        }
    }
    return wins / pairs;
}

struct Table {
    std::vector<double> scores;
    std::vector<int> labels;
};

// Coarse integer scores so ties are common.
Table random_table(std::size_t n, Rng& rng) {
    std::uniform_int_distribution<int> score(0, 4);
    std::bernoulli_distribution positive(0.4);
    Table t;
    for (std::size_t k = 0; k < n; ++k) {
        t.scores.push_back(score(rng));
        t.labels.push_back(positive(rng) ? 1 : 0);
    }
    t.labels[0] = 1;
    t.labels[1] = 0;
    return t;
}

RowSet range(std::size_t begin, std::size_t end) {
    RowSet rows;
    for (auto k = begin; k < end; ++k) {
        rows.push_back(k);
    }
    return rows;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "gridshield_tests" / name;
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("fusion standardizes on the given rows and adds") {
    const std::vector<double> se{1.0, 2.0, 3.0, 4.0, 10.0};
    const std::vector<double> ecd{5.0, 5.0, 6.0, 8.0, 1.0};
    const RowSet train{0, 1, 2, 3};
    const auto f = fuse_scores(se, ecd, train);
    // se over rows 0..3: mean 2.5, sd sqrt(5/3); ecd: mean 6, sd sqrt(2).
    const double sd_se = std::sqrt(5.0 / 3.0);
    const double sd_ecd = std::sqrt(2.0);
    for (std::size_t k = 0; k < se.size(); ++k) {
        const double hand = (se[k] - 2.5) / sd_se + (ecd[k] - 6.0) / sd_ecd;
        CHECK(std::abs(f.fused[k] - hand) < 1e-12);
    }
    CHECK(f.se.mean == 2.5);
    CHECK(f.ecd.mean == 6.0);
}

TEST_CASE("fusion of already standardized scores is the plain sum") {
    const std::vector<double> a{-1.0, 1.0, 0.0};
    const std::vector<double> b{1.0, -1.0, 0.0};
    const auto f = fuse_scores(a, b, {0, 1, 2});
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(f.fused[k] == doctest::Approx(a[k] + b[k]));
    }
}

TEST_CASE("fusion is unchanged by affine rescaling of either stream") {
    Rng rng(2);
    std::normal_distribution<double> n;
    std::vector<double> se(200);
    std::vector<double> ecd(200);
    for (std::size_t k = 0; k < se.size(); ++k) {
        se[k] = 600.0 + 40.0 * n(rng);
        ecd[k] = 20.0 + 5.0 * n(rng);
    }
    const RowSet train = range(0, 60);
    const auto base = fuse_scores(se, ecd, train);
    std::vector<double> se_scaled = se;
    for (auto& v : se_scaled) {
        v = 3.7 * v - 120.0;
    }
    std::vector<double> ecd_shifted = ecd;
    for (auto& v : ecd_shifted) {
        v += 55.0;
    }
    const auto scaled = fuse_scores(se_scaled, ecd_shifted, train);
    for (std::size_t k = 0; k < se.size(); ++k) {
        CHECK(std::abs(scaled.fused[k] - base.fused[k]) < 1e-9);
    }
}

TEST_CASE("fusion rejects degenerate training scores and skips the sentinel") {
    const std::vector<double> flat{1.0, 1.0, 1.0};
    const std::vector<double> ok{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(fuse_scores(flat, ok, {0, 1, 2}), ValidationError);
    CHECK_THROWS_AS(fuse_scores(ok, flat, {0, 1, 2}), ValidationError);

    const std::vector<double> with_inf{1.0, 3.0, kSeSentinel};
    const auto s = fit_standardizer(with_inf, {0, 1, 2}, "SE");
    CHECK(s.mean == 2.0);
    const auto f = fuse_scores(with_inf, {1.0, 2.0, 3.0}, {0, 1, 2});
    CHECK(std::isinf(f.fused[2]));
}

TEST_CASE("fusion threshold follows the detector threshold contract") {
    const std::vector<double> scores{-1.0, 0.0, 1.0, 8.0};
    const std::vector<int> labels{0, 0, 0, 1};
    const auto c = fusion_threshold(scores, labels, CorrDetConfig::default_eta_grid());
    CHECK(c.f1 == 1.0);
    CHECK(fusion_threshold(scores, labels, {0.0}).tau == 0.0);
}

TEST_CASE("ROC AUC equals pairwise concordance on random tables") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const auto t = random_table(8, rng);
        const auto roc = roc_curve(t.scores, t.labels);
        CHECK(roc.auc == doctest::Approx(concordance(t.scores, t.labels)).epsilon(1e-14));
        CHECK(roc.fpr.front() == 0.0);
        CHECK(roc.tpr.back() == 1.0);
        CHECK(std::is_sorted(roc.fpr.begin(), roc.fpr.end()));
        CHECK(std::is_sorted(roc.tpr.begin(), roc.tpr.end()));
    }
}

TEST_CASE("ROC edge cases") {
    SUBCASE("perfect separation") {
        const auto roc = roc_curve({0.1, 0.2, 0.9, 1.5}, {0, 0, 1, 1});
        CHECK(roc.auc == 1.0);
        CHECK(roc.auc_trunc == 1.0);
    }
    SUBCASE("constant scores lie on the diagonal") {
        const auto roc = roc_curve({3.0, 3.0, 3.0, 3.0, 3.0}, {0, 1, 0, 1, 0});
        CHECK(roc.auc == 0.5);
        // Triangle of area 0.02 over fpr <= 0.2, divided by 0.2.
        CHECK(roc.auc_trunc == doctest::Approx(0.1));
        CHECK(roc.fpr.size() == 2);
    }
    SUBCASE("infinite scores rank first") {
        const auto roc = roc_curve({kSeSentinel, 1.0, 2.0}, {1, 0, 0});
        CHECK(roc.auc == 1.0);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(roc_curve({1.0, 2.0}, {0, 0}), ValidationError);
        CHECK_THROWS_AS(roc_curve({1.0, std::nan("")}, {0, 1}), ValidationError);
    }
}

TEST_CASE("AUC is invariant under a strictly increasing transform") {
    Rng rng(7);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> scores(300);
        std::vector<int> labels(300);
        for (std::size_t k = 0; k < scores.size(); ++k) {
            labels[k] = k % 4 == 0 ? 1 : 0;
            scores[k] = n(rng) + (labels[k] == 1 ? 1.0 : 0.0);
        }
        std::vector<double> cubed = scores;
        for (auto& v : cubed) {
            v = v * v * v;
        }
        const auto a = roc_curve(scores, labels);
        const auto b = roc_curve(cubed, labels);
        CHECK(a.auc == doctest::Approx(b.auc).epsilon(1e-14));
        CHECK(a.auc_trunc == doctest::Approx(b.auc_trunc).epsilon(1e-14));
    }
}

TEST_CASE("partial AUC interpolates inside a segment") {
    RocCurve roc;
    roc.fpr = {0.0, 0.5, 1.0};
    roc.tpr = {0.0, 1.0, 1.0};
    CHECK(partial_auc(roc, 0.2) == doctest::Approx(0.5 * 0.2 * 0.4));
    CHECK(partial_auc(roc, 1.0) == doctest::Approx(0.75));
}

TEST_CASE("vertical averaging") {
    Rng rng(13);
    std::normal_distribution<double> n;
    std::vector<RocCurve> curves;
    for (int r = 0; r < 6; ++r) {
        std::vector<double> scores(120);
        std::vector<int> labels(120);
        for (std::size_t k = 0; k < scores.size(); ++k) {
            labels[k] = k % 3 == 0 ? 1 : 0;
            scores[k] = n(rng) + (labels[k] == 1 ? 0.8 * r : 0.0);
        }
        curves.push_back(roc_curve(scores, labels));
    }
    const auto mean = vertical_average(curves);
    REQUIRE(mean.fpr.size() == kRocGridPoints);
    CHECK(mean.fpr.front() == 0.0);
    CHECK(mean.fpr.back() == 1.0);
    for (std::size_t g = 0; g < mean.fpr.size(); ++g) {
        CHECK(mean.tpr[g] >= mean.tpr_min[g] - 1e-15);
        CHECK(mean.tpr[g] <= mean.tpr_max[g] + 1e-15);
    }
    CHECK(mean.tpr.back() == 1.0);

    // A single perfect curve averages to tpr = 1 everywhere.
    const auto perfect = vertical_average({roc_curve({0.0, 1.0}, {0, 1})});
    CHECK(std::all_of(perfect.tpr.begin(), perfect.tpr.end(), [](double v) { return v == 1.0; }));
    CHECK(perfect.auc == doctest::Approx(1.0));
}

TEST_CASE("splits") {
    EvalConfig cfg;
    cfg.split_seed = 5;
    const auto a = make_split(1000, cfg, 0);
    CHECK(a.train.size() == 300);
    CHECK(a.test.size() == 700);
    std::vector<std::size_t> all = a.train;
    all.insert(all.end(), a.test.begin(), a.test.end());
    std::sort(all.begin(), all.end());
    CHECK(all == range(0, 1000));
    CHECK(make_split(1000, cfg, 0).train == a.train);
    CHECK(make_split(1000, cfg, 1).train != a.train);

    cfg.block_split = true;
    const auto b = make_split(1000, cfg, 3);
    CHECK(b.train.size() == 300);
    CHECK(b.train.back() - b.train.front() == 299);

    cfg.train_frac = 0.0001;
    CHECK_THROWS_AS(make_split(100, cfg, 0), ValidationError);
    CHECK_THROWS_AS(EvalConfig::from_json({{"repeats", 3}}), ValidationError);
    CHECK_THROWS_WITH_AS(method_from_string("svm"), doctest::Contains("se, ecd, corrdet, fusion"), ValidationError);
}

TEST_CASE("experiment on a small 14-bus dataset") {
    const auto& net = case14();
    const auto schema = build_schema(net);
    GenerateOptions o;
    o.load_seed = 61;
    o.noise_seed = 62;
    o.workers = 2;
    AttackPlan attack;
    attack.fraction_attacked = 0.1;
    attack.seed = 63;
    const auto ds = gen_dataset(net, schema, 900, o, attack);

    EvalConfig eval;
    eval.split_seed = 64;
    eval.repeats = 3;
    const auto report = run_experiment(ds, eval, {}, {}, 1);
    CHECK_FALSE(report.partial);
    CHECK(report.methods.size() == 4);
    for (const auto& [m, s] : report.methods) {
        CHECK(s.auc.size() == 3);
        CHECK(s.mean_auc > 0.5);
        CHECK(s.mean_auc <= 1.0);
        CHECK(s.mean_auc_trunc <= 1.0);
    }

    SUBCASE("worker count does not change the report") {
        const auto threaded = run_experiment(ds, eval, {}, {}, 3);
        CHECK(threaded.to_json().dump() == report.to_json().dump());
    }

    SUBCASE("precomputed SE scores give the same report") {
        const auto se = run_se_detector(ds, {}, 1);
        CHECK(run_experiment(ds, eval, {}, {}, 1, &se).to_json().dump() == report.to_json().dump());
    }

    SUBCASE("report files") {
        const auto dir = scratch("report");
        write_report(report, dir);
        const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
        CHECK(j.at("methods").at("fusion").at("auc").size() == 3);
        CHECK(j.at("config_digest") == report.config_digest);
        for (const auto m : all_methods()) {
            CHECK(fs::exists(dir / to_string(m) / "roc_mean.csv"));
            for (int k = 0; k < 3; ++k) {
                CHECK(fs::exists(dir / to_string(m) / ("roc_repeat_" + std::to_string(k) + ".csv")));
            }
        }
        const auto mean_csv = read_file(dir / "se" / "roc_mean.csv");
        CHECK(mean_csv.rfind("fpr,tpr", 0) == 0);
        CHECK(std::count(mean_csv.begin(), mean_csv.end(), '\n') == static_cast<long>(kRocGridPoints + 1));
    }

    SUBCASE("subset of methods") {
        EvalConfig only = eval;
        only.methods = {Method::Ecd};
        only.repeats = 1;
        const auto r = run_experiment(ds, only, {}, {}, 1);
        CHECK(r.methods.size() == 1);
        CHECK(r.methods.count(Method::Ecd) == 1);
    }
}
