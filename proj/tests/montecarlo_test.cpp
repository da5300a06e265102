#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "misclass/montecarlo.hpp"

#include "test_util.hpp"

using namespace misclass;

namespace {

StudyConfig small_study(std::size_t reps, unsigned workers = 1) {
    StudyConfig cfg;
    ScenarioConfig c = ScenarioConfig::defaults(Scenario::S1a);
    c.n_obs = 500;
    c.n_annotated = 100;
    cfg.grid = {c};
    cfg.estimators = {EstimatorKind::Naive, EstimatorKind::Feasible};
    cfg.replications = reps;
    cfg.master_seed = 17;
    cfg.workers = workers;
    return cfg;
}

std::string records_text(const std::vector<ReplicationRecord>& records) {
    std::ostringstream out;
    write_record_header(out);
    for (const auto& r : records) write_record(out, r);
    return out.str();
}

ReplicationRecord synthetic(std::size_t rep, double estimate, double se, double truth) {
    ReplicationRecord r;
    r.label = "synthetic";
    r.replication = rep;
    r.estimator = EstimatorKind::MLA;
    r.term = "x";
    r.estimate = estimate;
    r.std_error = se;
    r.ci_low = estimate - kWaldZ * se;
    r.ci_high = estimate + kWaldZ * se;
    r.true_value = truth;
    r.converged = true;
    r.covered = r.ci_low <= truth && truth <= r.ci_high;
    return r;
}

} // namespace

TEST(Study, RecordCardinality) {
    const auto records = run_study(small_study(10));
    EXPECT_EQ(records.size(), 60u);
    for (const auto& r : records) EXPECT_TRUE(r.error.empty()) << r.error;
}

TEST(Study, DeterministicAcrossRunsAndWorkers) {
    const std::string a = records_text(run_study(small_study(6, 1)));
    const std::string b = records_text(run_study(small_study(6, 1)));
    const std::string c = records_text(run_study(small_study(6, 3)));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
    StudyConfig other = small_study(6);
    other.master_seed = 18;
    EXPECT_NE(a, records_text(run_study(other)));
}

TEST(Study, SinkReceivesRecordsInOrder) {
    std::vector<std::pair<std::size_t, std::size_t>> seen;
    StudyConfig cfg = small_study(5, 2);
    ScenarioConfig second = cfg.grid[0];
    second.n_annotated = 50;
    cfg.grid.push_back(second);
    run_study(cfg, [&](const ReplicationRecord& r) { seen.emplace_back(r.cell, r.replication); });
    EXPECT_EQ(seen.size(), 2u * 5u * 2u * 3u);
    EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
}

TEST(Study, FailuresAreRecordedNotThrown) {
    StudyConfig cfg = small_study(3);
    cfg.grid[0].n_annotated = 4; // too few rows for the feasible fit
    const auto records = run_study(cfg);
    ASSERT_EQ(records.size(), 18u);
    std::size_t failed = 0;
    for (const auto& r : records) {
        if (r.estimator == EstimatorKind::Feasible) {
            EXPECT_EQ(r.error, "TooFewAnnotations");
            EXPECT_FALSE(r.converged);
            ++failed;
        }
    }
    EXPECT_EQ(failed, 9u);
    const StudySummary s = summarize(records);
    EXPECT_EQ(s.find(0, EstimatorKind::Feasible, "x")->n_failed, 3u);
    EXPECT_EQ(s.find(0, EstimatorKind::Naive, "x")->n_ok, 3u);
}

TEST(Study, ValidationErrors) {
    StudyConfig cfg = small_study(0);
    EXPECT_ERROR_CODE(cfg.validate(), InvalidConfig);
    cfg = small_study(1);
    cfg.grid.push_back(cfg.grid[0]);
    EXPECT_ERROR_CODE(cfg.validate(), InvalidConfig);
    cfg = small_study(1);
    cfg.estimators.clear();
    EXPECT_ERROR_CODE(cfg.validate(), InvalidConfig);
}

TEST(Records, CsvRoundTrip) {
    StudyConfig cfg = small_study(3);
    cfg.grid[0].n_annotated = 4;
    const auto records = run_study(cfg);
    const std::string text = records_text(records);
    std::istringstream in(text);
    const auto back = read_records(in);
    ASSERT_EQ(back.size(), records.size());
    EXPECT_EQ(records_text(back), text);
}

TEST(Records, RejectsForeignHeader) {
    std::istringstream in("a,b\n1,2\n");
    EXPECT_ERROR_CODE(read_records(in), HeaderError);
}

TEST(Summary, ExactEstimates) {
    std::vector<ReplicationRecord> records;
    for (std::size_t i = 0; i < 10; ++i) records.push_back(synthetic(i, 0.5, 0.1, 0.5));
    records[3].covered = false; // coverage reports the flag, not a recomputation
    const SummaryRow& r = summarize(records).rows.at(0);
    EXPECT_EQ(r.bias, 0.0);
    EXPECT_EQ(r.sd_estimate, 0.0);
    EXPECT_DOUBLE_EQ(r.coverage, 0.9);
    EXPECT_NEAR(r.mean_ci_width, 2 * kWaldZ * 0.1, 1e-12);
}

TEST(Summary, WaldCoverageIsNominal) {
    std::mt19937_64 gen(5);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::vector<ReplicationRecord> records;
    for (std::size_t i = 0; i < 1000; ++i) records.push_back(synthetic(i, 1.0 + noise(gen), 0.3, 1.0));
    const SummaryRow& r = summarize(records).rows.at(0);
    EXPECT_GE(r.coverage, 0.93);
    EXPECT_LE(r.coverage, 0.97);
    EXPECT_NEAR(r.sd_estimate, 0.3, 0.03);
    EXPECT_NEAR(r.mc_se, r.sd_estimate / std::sqrt(1000.0), 1e-12);
}

TEST(Summary, InvariantToRecordOrder) {
    auto records = run_study(small_study(8));
    std::ostringstream a, b;
    write_summary_csv(a, summarize(records));
    std::mt19937 gen(3);
    std::shuffle(records.begin(), records.end(), gen);
    write_summary_csv(b, summarize(records));
    EXPECT_EQ(a.str(), b.str());
}

TEST(Summary, JsonLayout) {
    const auto s = summarize(run_study(small_study(4)));
    const auto doc = summary_json(s);
    EXPECT_EQ(doc["schema"], 1);
    const auto& cell = doc["cells"].begin().value();
    EXPECT_EQ(cell["cell"], 0);
    EXPECT_TRUE(cell["estimators"]["feasible"]["x"].contains("coverage"));
    EXPECT_EQ(cell["estimators"]["naive"]["z"]["n_ok"], 4);
}

TEST(Summary, EmptyInput) { EXPECT_ERROR_CODE(summarize({}), EmptyInput); }

TEST(Quantile, Type7) {
    EXPECT_DOUBLE_EQ(quantile_type7({1, 2, 3, 4}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile_type7({4, 1, 3, 2}, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(quantile_type7({10, 20, 30, 40, 50}, 0.975), 49.0);
    EXPECT_DOUBLE_EQ(quantile_type7({7}, 0.025), 7.0);
    EXPECT_DOUBLE_EQ(quantile_type7({1, 2}, 1.0), 2.0);
}

TEST(Study, FeasibleSdHalvesWithFourTimesTheAnnotations) {
    StudyConfig cfg;
    for (std::size_t m : {100, 400}) {
        ScenarioConfig c = ScenarioConfig::defaults(Scenario::S1a);
        c.n_obs = 1000;
        c.n_annotated = m;
        cfg.grid.push_back(c);
    }
    cfg.estimators = {EstimatorKind::Feasible};
    cfg.replications = 300;
    cfg.master_seed = 3;
    const auto s = summarize(run_study(cfg));
    const double ratio = s.find(0, EstimatorKind::Feasible, "x")->sd_estimate / s.find(1, EstimatorKind::Feasible, "x")->sd_estimate;
    EXPECT_NEAR(ratio, 2.0, 0.3);
}

TEST(Presets, AllNamesResolve) {
    for (const auto& name : preset_names()) {
        const StudyConfig cfg = preset(name);
        EXPECT_NO_THROW(cfg.validate()) << name;
        EXPECT_EQ(cfg.replications, kPresetReplications);
    }
    EXPECT_EQ(preset("sim1a").grid.size(), 9u);
    EXPECT_TRUE(preset("robustness-misspec").nondifferential_mla);
    EXPECT_ERROR_CODE(preset("nope"), InvalidConfig);
}

TEST(Presets, JsonConfig) {
    const auto doc = nlohmann::json::parse(
        R"({"replications": 7, "estimators": ["mla", "naive"],
            "grid": [{"scenario": "s2a", "n_obs": 800, "target_accuracy": 0.8}]})");
    const StudyConfig cfg = study_from_json(doc);
    EXPECT_EQ(cfg.replications, 7u);
    ASSERT_EQ(cfg.grid.size(), 1u);
    EXPECT_EQ(cfg.grid[0].n_obs, 800u);
    EXPECT_EQ(cfg.grid[0].b_x, 0.7);
    EXPECT_EQ(cfg.grid[0].target_accuracy, 0.8);
    EXPECT_ERROR_CODE(study_from_json(nlohmann::json::parse(R"({"estimators": ["x"], "grid": []})")), InvalidConfig);
    EXPECT_ERROR_CODE(study_from_json(nlohmann::json::parse(R"({"grid": []})")), InvalidConfig);
}
