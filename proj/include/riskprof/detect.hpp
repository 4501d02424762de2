#pragma once
// Anomaly detectors trained on selected cohorts: a labeled kNN voter and a
// one-class SVM with a sigmoid kernel fitted by SMO on the one-class dual.

#include <cstdint>
#include <string>
#include <vector>

#include "riskprof/cluster.hpp"
#include "riskprof/data.hpp"

namespace riskprof {

enum class VerdictLabel { Benign, Malicious };

const char* to_string(VerdictLabel v);

struct FeatureScaling {
    std::vector<double> mean;
    std::vector<double> scale;  // never zero

    static FeatureScaling fit(const std::vector<std::vector<double>>& points);
    std::vector<double> apply(const std::vector<double>& point) const;
};

struct KnnParams {
    std::size_t k = 7;
    double minkowski_p = 2.0;
};

struct KnnDetectorModel {
    KnnParams params;
    FeatureScaling scaling;
    std::vector<std::vector<double>> points;  // normalized, benign block first
    std::vector<std::uint8_t> labels;         // 0 benign, 1 malicious
};

/// Stores normalized training points with labels; no iterative training.
/// Throws on an empty class or k larger than the stored point count.
KnnDetectorModel fit_knn(const std::vector<std::vector<double>>& benign,
                         const std::vector<std::vector<double>>& malicious,
                         const KnnParams& params = {});

/// Majority label among the k nearest stored points (Minkowski-p distance,
/// distance ties resolved by stored index).
VerdictLabel verdict(const KnnDetectorModel& model, const std::vector<double>& window);

struct OcsvmParams {
    double gamma = -1.0;        // <= 0 means 1 / n_features
    double coef0 = 10.0;
    double nu = 0.5;
    double tol = 1e-3;
    long long max_iter = -1;    // < 0 disables the cap
};

struct OcsvmDetectorModel {
    OcsvmParams params;
    double gamma_effective = 0.0;
    FeatureScaling scaling;
    std::vector<std::vector<double>> support_points;  // normalized
    std::vector<double> alpha;                        // matching support_points
    double rho = 0.0;
    std::size_t n_train = 0;
    std::size_t smo_iterations = 0;
};

/// Trains on benign windows only. The sigmoid kernel is indefinite, so the
/// pair update falls back to the feasible-segment endpoint whenever the
/// curvature is non-positive. Dual feasibility (box bounds and sum-to-one)
/// holds at the returned solution.
OcsvmDetectorModel fit_ocsvm(const std::vector<std::vector<double>>& benign,
                             const OcsvmParams& params = {});

double decision_value(const OcsvmDetectorModel& model, const std::vector<double>& window);
VerdictLabel verdict(const OcsvmDetectorModel& model, const std::vector<double>& window);

double sigmoid_kernel(const std::vector<double>& a, const std::vector<double>& b,
                      double gamma, double coef0);

enum class StrategyKind { LessVulnerable, MoreVulnerable, RandomSamples, AllPatients };

const char* to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

struct TrainingStrategy {
    StrategyKind kind = StrategyKind::AllPatients;
    std::size_t runs = 10;         // RandomSamples repetitions
    std::size_t cohort_size = 3;   // patients per RandomSamples run
};

/// Patient-id cohorts for a strategy: a single cohort for the deterministic
/// strategies, `runs` seeded cohorts for RandomSamples. Throws when fewer
/// than cohort_size patients exist for RandomSamples.
std::vector<std::vector<std::string>> select_training_cohorts(
    const TrainingStrategy& strategy, const VulnerabilityClusters& clusters,
    const std::vector<std::string>& all_patients, std::uint64_t seed);

/// Trace-level convenience wrapper: training-split traces of each cohort.
std::vector<std::vector<const PatientTrace*>> select_training_set(
    const TrainingStrategy& strategy, const VulnerabilityClusters& clusters,
    const std::vector<PatientTrace>& traces, std::uint64_t seed);

std::string knn_model_to_json(const KnnDetectorModel& model);
KnnDetectorModel knn_model_from_json(const std::string& text);
std::string ocsvm_model_to_json(const OcsvmDetectorModel& model);
OcsvmDetectorModel ocsvm_model_from_json(const std::string& text);

}  // namespace riskprof
