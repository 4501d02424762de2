#pragma once
// Run configuration: one JSON document with documented keys, validated and
// normalized with every default applied explicitly.

#include <cstdint>
#include <string>
#include <vector>

#include "riskprof/data.hpp"
#include "riskprof/detect.hpp"
#include "riskprof/forecast.hpp"
#include "riskprof/risk.hpp"
#include "riskprof/synth.hpp"

namespace riskprof {

struct DataConfig {
    std::string source = "synthetic";  // "synthetic" | "manifest"
    std::string manifest_path;
    SyntheticCohortConfig synthetic;
};

struct WindowConfig {
    std::size_t history_len = 12;  // 60 minutes at the nominal cadence
    std::size_t horizon = 6;       // 30 minutes ahead
};

struct AttackConfig {
    double step = 5.0;
    std::size_t max_iters = 200;
    double cgm_max = kCgmMax;
    std::string profiling_model = "personalized";  // which forecaster drives risk profiling
};

struct ClusterConfig {
    Linkage linkage = Linkage::Complete;
    bool standardize = true;
};

struct DetectConfig {
    KnnParams knn;
    OcsvmParams ocsvm;
    std::size_t max_train_benign = 1200;
    std::size_t max_train_malicious = 1200;
};

struct EvaluateConfig {
    std::vector<StrategyKind> strategies = {
        StrategyKind::LessVulnerable, StrategyKind::MoreVulnerable,
        StrategyKind::RandomSamples, StrategyKind::AllPatients};
    std::size_t random_runs = 10;
    std::size_t random_cohort_size = 3;
    std::string overlay_detector = "knn";
    StrategyKind overlay_strategy = StrategyKind::AllPatients;
};

struct Config {
    std::uint64_t seed = 42;
    std::string out_dir = "runs";
    DataConfig data;
    StateThresholds thresholds;
    WindowConfig windows;
    TrainConfig forecaster;
    AttackConfig attack;
    SeverityTable severity = SeverityTable::defaults();
    double severity_same_state = 1.0;
    ClusterConfig cluster;
    DetectConfig detect;
    EvaluateConfig evaluate;

    // Keys that were absent from the input and fell back to defaults.
    std::vector<std::string> defaults_applied;
};

/// Parses and validates a config document. Unknown keys and out-of-range
/// values raise std::invalid_argument naming the key.
Config validate_config(const std::string& json_text);
Config load_config(const std::string& path);

/// Canonical normalized serialization (defaults applied, fixed key order);
/// its sha256 names the run directory.
std::string config_to_canonical_json(const Config& config);
std::string config_hash(const Config& config);

}  // namespace riskprof
