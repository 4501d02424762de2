#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "riskprof/evaluate.hpp"
#include "riskprof/synth.hpp"

using namespace riskprof;

namespace {

std::vector<VerdictLabel> labels(const std::string& spec) {
    std::vector<VerdictLabel> out;
    for (char c : spec)
        out.push_back(c == 'm' ? VerdictLabel::Malicious : VerdictLabel::Benign);
    return out;
}

}  // namespace

TEST_CASE("confusion counts match a manual tally") {
    // 4 malicious / 6 benign with a hand-specified verdict list.
    const auto truth = labels("mmmmbbbbbb");
    const auto verdicts = labels("mmbmbbbmbb");
    const auto c = confusion(verdicts, truth);
    CHECK(c.tp == 3);
    CHECK(c.fn == 1);
    CHECK(c.fp == 1);
    CHECK(c.tn == 5);
    CHECK_THROWS_AS(confusion({}, {}), std::invalid_argument);
}

TEST_CASE("perfect and flag-everything detectors produce degenerate counts") {
    const auto truth = labels("mmbb");
    const auto perfect = confusion(labels("mmbb"), truth);
    CHECK(perfect.fn == 0);
    CHECK(perfect.fp == 0);
    const auto flag_all = confusion(labels("mmmm"), truth);
    CHECK(flag_all.fn == 0);
    CHECK(flag_all.tn == 0);
}

TEST_CASE("metrics handle defined and undefined cells") {
    ConfusionCounts c;
    c.tp = 3;
    c.fn = 1;
    c.fp = 2;
    c.tn = 4;
    const auto m = metrics(c);
    CHECK(*m.recall == doctest::Approx(0.75));
    CHECK(*m.precision == doctest::Approx(0.6));
    CHECK(*m.f1 == doctest::Approx(2.0 * 0.75 * 0.6 / 1.35));

    ConfusionCounts no_pos;
    no_pos.tn = 5;
    no_pos.fp = 1;
    const auto u = metrics(no_pos);
    CHECK_FALSE(u.recall.has_value());
    CHECK(u.precision.has_value());  // tp + fp = 1
    CHECK_FALSE(u.f1.has_value());

    ConfusionCounts ideal;
    ideal.tp = 4;
    const auto i = metrics(ideal);
    CHECK(*i.recall == 1.0);
    CHECK(*i.precision == 1.0);
    CHECK(*i.f1 == 1.0);
}

TEST_CASE("metric identities hold over random confusion tables") {
    Rng rng(14);
    for (int rep = 0; rep < 300; ++rep) {
        ConfusionCounts c;
        c.tp = rng.index(20);
        c.fp = rng.index(20);
        c.tn = rng.index(20);
        c.fn = rng.index(20);
        const auto m = metrics(c);
        if (c.tp + c.fn > 0) {
            REQUIRE(m.recall.has_value());
            CHECK(*m.recall >= 0.0);
            CHECK(*m.recall <= 1.0);
        } else {
            CHECK_FALSE(m.recall.has_value());
        }
        if (m.recall && m.precision && *m.recall + *m.precision > 0.0) {
            REQUIRE(m.f1.has_value());
            const double expect =
                2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
            CHECK(*m.f1 == doctest::Approx(expect));
            CHECK(*m.f1 <= std::max(*m.precision, *m.recall) + 1e-12);
        }
    }
}

TEST_CASE("mean_of_defined is invariant to value order") {
    std::vector<std::optional<double>> values = {0.4, 0.9, std::nullopt, 0.1, 0.8};
    auto shuffled = values;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(*mean_of_defined(values) == *mean_of_defined(shuffled));
    CHECK(*mean_of_defined(values) == doctest::Approx(0.55));
    CHECK_FALSE(mean_of_defined({std::nullopt, std::nullopt}).has_value());
}

namespace {

std::vector<TestSample> tiny_pool() {
    Rng rng(5);
    std::vector<TestSample> pool;
    for (int i = 0; i < 40; ++i) {
        TestSample s;
        s.patient_id = i % 2 == 0 ? "pa" : "pb";
        s.target_timestamp = 300 * i;
        s.truth = VerdictLabel::Benign;
        s.features = {rng.normal(), rng.normal()};
        pool.push_back(s);
    }
    for (int i = 0; i < 25; ++i) {
        TestSample s;
        s.patient_id = i % 2 == 0 ? "pa" : "pb";
        s.target_timestamp = 300 * (40 + i);
        s.truth = VerdictLabel::Malicious;
        s.features = {6.0 + rng.normal(), 6.0 + rng.normal()};
        pool.push_back(s);
    }
    return pool;
}

StrategyInputs strategy_inputs(StrategyKind kind, std::uint64_t seed, std::size_t runs) {
    Rng rng(seed);
    StrategyInputs s;
    s.kind = kind;
    for (std::size_t run = 0; run < runs; ++run) {
        DetectorTrainingSet set;
        set.cohort = {"pa", "pb"};
        for (int i = 0; i < 30; ++i) set.benign.push_back({rng.normal(), rng.normal()});
        for (int i = 0; i < 15; ++i)
            set.malicious.push_back({6.0 + rng.normal(), 6.0 + rng.normal()});
        s.runs.push_back(std::move(set));
    }
    return s;
}

}  // namespace

TEST_CASE("run_experiment produces one cell per detector and strategy") {
    ExperimentConfig config;
    config.knn = {5, 2.0};
    config.ocsvm.coef0 = 0.0;
    config.ocsvm.nu = 0.3;
    const auto pool = tiny_pool();
    const std::vector<StrategyInputs> strategies = {
        strategy_inputs(StrategyKind::AllPatients, 1, 1),
        strategy_inputs(StrategyKind::RandomSamples, 2, 10),
    };
    const auto report = run_experiment(pool, strategies, config);
    REQUIRE(report.cells.size() == 4);  // 2 detectors x 2 strategies
    CHECK(report.test_benign == 40);
    CHECK(report.test_malicious == 25);
    for (const auto& cell : report.cells) {
        if (cell.strategy == StrategyKind::RandomSamples) {
            CHECK(cell.run_metrics.size() == 10);
        } else {
            CHECK(cell.run_metrics.size() == 1);
        }
        CHECK(cell.per_patient.size() == 2);
        // The two classes are well separated; both detectors should find most
        // of the malicious mass.
        REQUIRE(cell.m.recall.has_value());
        CHECK(*cell.m.recall > 0.5);
    }

    // Single-strategy slicing: one row per detector.
    const auto single = run_experiment(
        pool, {strategy_inputs(StrategyKind::AllPatients, 3, 1)}, config);
    CHECK(single.cells.size() == 2);
}

TEST_CASE("report JSON round trip preserves cells and undefined metrics") {
    ExperimentConfig config;
    config.knn = {3, 2.0};
    config.ocsvm.coef0 = 0.0;
    const auto report = run_experiment(
        tiny_pool(), {strategy_inputs(StrategyKind::LessVulnerable, 4, 1)}, config);
    auto restored = report_from_json(report_to_json(report));
    REQUIRE(restored.cells.size() == report.cells.size());
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        CHECK(restored.cells[i].detector == report.cells[i].detector);
        CHECK(restored.cells[i].counts.tp == report.cells[i].counts.tp);
        CHECK(restored.cells[i].m.recall == report.cells[i].m.recall);
        CHECK(restored.cells[i].per_patient.size() == report.cells[i].per_patient.size());
    }
    const auto md = report_to_markdown(report);
    CHECK(md.find("| detector |") != std::string::npos);
    CHECK(md.find("knn") != std::string::npos);
}

TEST_CASE("emit_plot_data writes the expected row counts") {
    namespace fs = std::filesystem;
    ExperimentConfig config;
    config.knn = {5, 2.0};
    config.ocsvm.coef0 = 0.0;
    const auto pool = tiny_pool();
    const std::vector<StrategyInputs> strategies = {
        strategy_inputs(StrategyKind::LessVulnerable, 1, 1),
        strategy_inputs(StrategyKind::MoreVulnerable, 2, 1),
        strategy_inputs(StrategyKind::RandomSamples, 3, 10),
        strategy_inputs(StrategyKind::AllPatients, 4, 1),
    };
    const auto report = run_experiment(pool, strategies, config);

    PlotData data;
    data.report = &report;
    NormalAbnormalRatio ratio;
    ratio.normal = 80;
    ratio.abnormal = 20;
    ratio.value = 4.0;
    for (int i = 0; i < 12; ++i)
        data.ratios.emplace_back("p" + std::to_string(i), ratio);
    for (int i = 0; i < 100; ++i)
        data.overlays["pa"].push_back(
            {std::to_string(300 * i), "120.5", "benign", "benign"});

    const auto dir = (fs::temp_directory_path() / "riskprof_plots").string();
    fs::remove_all(dir);
    const auto written = emit_plot_data(data, dir);

    auto count_rows = [](const std::string& path) {
        std::ifstream in(path);
        std::string line;
        std::size_t rows = 0;
        std::getline(in, line);  // header
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        return rows;
    };
    // 8 pooled rows + 2 detectors x 10 random runs.
    CHECK(count_rows((fs::path(dir) / "recall.csv").string()) == 8 + 20);
    CHECK(count_rows((fs::path(dir) / "ratios.csv").string()) == 12);
    CHECK(count_rows((fs::path(dir) / "overlay_pa.csv").string()) == 100);
    CHECK(written.size() == 3 + 1 + 1);
}
