#include <doctest.h>

#include <stdexcept>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "riskprof/data.hpp"

using namespace riskprof;
namespace fs = std::filesystem;

namespace {

PatientTrace make_trace(const std::vector<double>& cgm, std::int64_t cadence = 300) {
    PatientTrace t;
    t.patient_id = "fixture";
    t.cadence = cadence;
    for (std::size_t i = 0; i < cgm.size(); ++i) {
        GlucoseSample s;
        s.timestamp = static_cast<std::int64_t>(i) * cadence;
        s.cgm = cgm[i];
        s.basal = 1.0;
        t.samples.push_back(s);
    }
    return t;
}

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "riskprof_test_data";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("classify_state applies context-dependent thresholds") {
    CHECK(classify_state(200.0, MealContext::Fasting) == DiagnosticState::Hyper);
    CHECK(classify_state(130.0, MealContext::Postprandial) == DiagnosticState::Normal);
    CHECK(classify_state(65.0, MealContext::Fasting) == DiagnosticState::Hypo);
    // boundary values are not hyper (strict inequality)
    CHECK(classify_state(125.0, MealContext::Fasting) == DiagnosticState::Normal);
    CHECK(classify_state(180.0, MealContext::Postprandial) == DiagnosticState::Normal);
    CHECK(classify_state(70.0, MealContext::Fasting) == DiagnosticState::Normal);
}

TEST_CASE("classify_state is monotone in glucose for fixed context") {
    for (const auto ctx : {MealContext::Fasting, MealContext::Postprandial}) {
        double prev_rank = -1;
        for (double g = 0.0; g <= 499.0; g += 0.25) {
            const auto st = classify_state(g, ctx);
            const double rank = st == DiagnosticState::Hypo ? 0
                                : st == DiagnosticState::Normal ? 1
                                                                : 2;
            CHECK(rank >= prev_rank);
            prev_rank = rank;
        }
    }
}

TEST_CASE("meal_context_at uses a two-hour carb window") {
    auto trace = make_trace(std::vector<double>(60, 100.0));
    trace.samples[10].carbs = 45.0;  // t = 3000

    // 30 minutes after the carb event
    CHECK(meal_context_at(trace, 3000 + 1800) == MealContext::Postprandial);
    // exactly at the event
    CHECK(meal_context_at(trace, 3000) == MealContext::Postprandial);
    // three hours later
    CHECK(meal_context_at(trace, 3000 + 10800) == MealContext::Fasting);
    // window is half-open: exactly +2h is fasting again
    CHECK(meal_context_at(trace, 3000 + 7200) == MealContext::Fasting);
    CHECK_THROWS_AS(meal_context_at(trace, -5), std::out_of_range);

    auto no_meals = make_trace(std::vector<double>(20, 100.0));
    for (const auto& s : no_meals.samples)
        CHECK(meal_context_at(no_meals, s.timestamp) == MealContext::Fasting);
}

TEST_CASE("meal_contexts sweep matches per-timestamp queries") {
    auto trace = make_trace(std::vector<double>(50, 100.0));
    trace.samples[5].carbs = 30.0;
    trace.samples[40].carbs = 60.0;
    const auto contexts = meal_contexts(trace);
    for (std::size_t i = 0; i < trace.samples.size(); ++i)
        CHECK(contexts[i] == meal_context_at(trace, trace.samples[i].timestamp));
}

TEST_CASE("windowize produces len - history - horizon + 1 windows") {
    const auto trace = make_trace(std::vector<double>(20, 100.0));
    const auto windows = windowize(trace, 12, 6);
    CHECK(windows.size() == 3);
    CHECK(windows[0].start_timestamp == 0);
    CHECK(windows[0].target_timestamp == trace.samples[17].timestamp);
    CHECK(windows[2].target_timestamp == trace.samples[19].timestamp);
    CHECK(windows[0].values.size() == 12 * kFeaturesPerStep);
    CHECK(windows[0].target_cgm == trace.samples[17].cgm);
}

TEST_CASE("windowize rejects too-short traces") {
    const auto trace = make_trace(std::vector<double>(10, 100.0));
    CHECK_THROWS_AS(windowize(trace, 12, 6), std::runtime_error);
}

TEST_CASE("windowize drops windows straddling a gap") {
    // 20 samples with a 30-minute hole between samples 9 and 10.
    auto trace = make_trace(std::vector<double>(20, 100.0));
    for (std::size_t i = 10; i < trace.samples.size(); ++i)
        trace.samples[i].timestamp += 1800 - 300;
    const auto windows = windowize(trace, 4, 2);

    // Brute-force enumeration with the same gap rule.
    std::size_t expect = 0;
    std::vector<std::int64_t> kept_targets;
    for (std::size_t i = 0; i + 6 <= trace.samples.size(); ++i) {
        bool ok = true;
        for (std::size_t j = i; j < i + 5; ++j)
            if (trace.samples[j + 1].timestamp - trace.samples[j].timestamp > 600) ok = false;
        if (ok) {
            ++expect;
            kept_targets.push_back(trace.samples[i + 5].timestamp);
        }
    }
    REQUIRE(windows.size() == expect);
    CHECK(windows.size() < 15);  // some windows were actually dropped
    for (std::size_t i = 0; i < windows.size(); ++i)
        CHECK(windows[i].target_timestamp == kept_targets[i]);
}

TEST_CASE("normal_to_abnormal_ratio counts states over the benign trace") {
    std::vector<double> cgm;
    for (int i = 0; i < 80; ++i) cgm.push_back(100.0);  // normal
    for (int i = 0; i < 20; ++i) cgm.push_back(200.0);  // hyper while fasting
    const auto trace = make_trace(cgm);
    const auto r = normal_to_abnormal_ratio(trace);
    CHECK_FALSE(r.unbounded);
    CHECK(r.normal == 80);
    CHECK(r.abnormal == 20);
    CHECK(r.value == doctest::Approx(4.0));
}

TEST_CASE("normal_to_abnormal_ratio reports all-normal traces as unbounded") {
    const auto trace = make_trace(std::vector<double>(30, 100.0));
    const auto r = normal_to_abnormal_ratio(trace);
    CHECK(r.unbounded);
    CHECK(r.abnormal == 0);
}

TEST_CASE("trace CSV round trip preserves samples and extra columns") {
    auto trace = make_trace({100.0, 101.5, 99.25, 180.125});
    trace.samples[1].carbs = 42.0;
    trace.samples[1].bolus = 4.2;
    trace.extra_names = {"heart_rate"};
    trace.extra_values = {{60.0, 61.0, 62.0, 63.0}};
    const auto path = temp_file("roundtrip.csv");
    write_trace_csv(trace, path.string());
    const auto loaded = load_trace_csv(path.string(), "fixture", Subset::Synthetic,
                                       Split::Train, 300);
    REQUIRE(loaded.samples.size() == trace.samples.size());
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
        CHECK(loaded.samples[i].timestamp == trace.samples[i].timestamp);
        CHECK(loaded.samples[i].cgm == trace.samples[i].cgm);
        CHECK(loaded.samples[i].carbs == trace.samples[i].carbs);
    }
    REQUIRE(loaded.extra_names.size() == 1);
    CHECK(loaded.extra_values[0] == trace.extra_values[0]);
}

TEST_CASE("trace CSV ingestion rejects bad rows by index") {
    const auto path = temp_file("bad.csv");

    {
        std::ofstream out(path);
        out << "timestamp,cgm,basal,bolus,carbs\n";
        out << "0,100,1,0,0\n";
        out << "300,612,1,0,0\n";
    }
    CHECK_THROWS_WITH_AS(
        load_trace_csv(path.string(), "p", Subset::A, Split::Train, 300),
        doctest::Contains("row 2"), std::runtime_error);

    {
        std::ofstream out(path);
        out << "timestamp,cgm,basal,bolus,carbs\n";
        out << "0,100,1,0,0\n";
        out << "0,101,1,0,0\n";
    }
    CHECK_THROWS_WITH_AS(
        load_trace_csv(path.string(), "p", Subset::A, Split::Train, 300),
        doctest::Contains("strictly increasing"), std::runtime_error);

    {
        std::ofstream out(path);
        out << "timestamp,cgm,basal,bolus,carbs\n";
        out << "0,abc,1,0,0\n";
    }
    CHECK_THROWS_AS(load_trace_csv(path.string(), "p", Subset::A, Split::Train, 300),
                    std::runtime_error);
}

TEST_CASE("valid CSV loads every row") {
    const auto path = temp_file("ok.csv");
    {
        std::ofstream out(path);
        out << "timestamp,cgm,basal,bolus,carbs\n";
        for (int i = 0; i < 10; ++i)
            out << i * 300 << ",10" << i << ",1,0,0\n";
    }
    const auto traces = load_traces(path.string(), TraceFormat::Csv);
    REQUIRE(traces.size() == 1);
    CHECK(traces[0].samples.size() == 10);
    CHECK(traces[0].patient_id == "ok");
}

TEST_CASE("cohort manifest round trip") {
    auto a = make_trace(std::vector<double>(25, 100.0));
    a.patient_id = "pa";
    a.split = Split::Train;
    auto b = make_trace(std::vector<double>(25, 110.0));
    b.patient_id = "pa";
    b.split = Split::Test;
    const auto dir = temp_file("cohort_dir");
    fs::create_directories(dir);
    const auto manifest = write_cohort({a, b}, dir.string());
    const auto loaded = load_traces(manifest, TraceFormat::Manifest);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].patient_id == "pa");
    CHECK(loaded[0].split == Split::Train);
    CHECK(loaded[1].split == Split::Test);
    CHECK(loaded[0].samples.size() == 25);
    CHECK(find_trace(loaded, "pa", Split::Test) != nullptr);
    CHECK(sorted_patient_ids(loaded) == std::vector<std::string>{"pa"});
}

TEST_CASE("gap_indices reports recording holes") {
    auto trace = make_trace(std::vector<double>(10, 100.0));
    for (std::size_t i = 6; i < trace.samples.size(); ++i) trace.samples[i].timestamp += 1200;
    const auto gaps = gap_indices(trace);
    REQUIRE(gaps.size() == 1);
    CHECK(gaps[0] == 5);
}
