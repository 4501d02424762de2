#pragma once
// Detector scoring: confusion counts, recall/precision/F1 with explicit
// undefined handling, and the strategy-by-detector experiment matrix.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "riskprof/detect.hpp"

namespace riskprof {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;  // positive class = malicious
};

/// Undefined cells (0/0) stay unset rather than collapsing to zero.
struct MetricSet {
    std::optional<double> recall;
    std::optional<double> precision;
    std::optional<double> f1;
};

ConfusionCounts confusion(const std::vector<VerdictLabel>& verdicts,
                          const std::vector<VerdictLabel>& truths);

MetricSet metrics(const ConfusionCounts& counts);

/// Order-free arithmetic mean (values are sorted before summation).
std::optional<double> mean_of_defined(const std::vector<std::optional<double>>& values);

struct TestSample {
    std::string patient_id;
    std::int64_t target_timestamp = 0;
    VerdictLabel truth = VerdictLabel::Benign;
    std::vector<double> features;
    double display_cgm = 0.0;  // last history cgm, for trace overlays
};

struct DetectorTrainingSet {
    std::vector<std::string> cohort;  // patient ids
    std::vector<std::vector<double>> benign;
    std::vector<std::vector<double>> malicious;
};

struct StrategyInputs {
    StrategyKind kind = StrategyKind::AllPatients;
    std::vector<DetectorTrainingSet> runs;  // one entry unless RandomSamples
};

struct PatientMetrics {
    std::string patient_id;
    ConfusionCounts counts;
    MetricSet m;
};

struct ExperimentCell {
    std::string detector;  // "knn" | "ocsvm"
    StrategyKind strategy = StrategyKind::AllPatients;
    ConfusionCounts counts;          // pooled over runs
    MetricSet m;                     // pooled for single-run, run-mean for RandomSamples
    std::vector<MetricSet> run_metrics;
    std::vector<ConfusionCounts> run_counts;
    std::vector<PatientMetrics> per_patient;  // first run only
    std::size_t train_benign = 0;
    std::size_t train_malicious = 0;
    std::vector<std::vector<std::string>> cohorts;
    std::vector<std::vector<VerdictLabel>> run_verdicts;  // aligned with the test pool
};

struct ExperimentConfig {
    KnnParams knn;
    OcsvmParams ocsvm;
    bool run_knn = true;
    bool run_ocsvm = true;
};

struct ExperimentReport {
    std::vector<ExperimentCell> cells;
    std::size_t test_benign = 0;
    std::size_t test_malicious = 0;
    std::map<std::string, std::string> provenance;  // artifact name -> hash
};

/// Fits and scores every (detector, strategy) cell on the shared test pool.
/// Throws when the test pool is empty or a training class is missing.
ExperimentReport run_experiment(const std::vector<TestSample>& test_pool,
                                const std::vector<StrategyInputs>& strategies,
                                const ExperimentConfig& config);

std::string report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const std::string& text);
std::string report_to_markdown(const ExperimentReport& report);

struct PlotData {
    const ExperimentReport* report = nullptr;
    std::vector<std::pair<std::string, NormalAbnormalRatio>> ratios;
    // overlay rows: patient -> (timestamp, cgm, verdict, truth)
    std::map<std::string, std::vector<std::array<std::string, 4>>> overlays;
};

/// Writes recall/precision/f1 CSVs, the per-patient ratio CSV, and one
/// overlay CSV per patient into `dir`. Returns the written paths.
std::vector<std::string> emit_plot_data(const PlotData& data, const std::string& dir);

}  // namespace riskprof
