#pragma once
// Constrained evasion attack: gradient-guided greedy coordinate ascent that
// manipulates only the cgm history of a window, projected into the
// physiologically plausible range for the window's meal context, until the
// forecasted state turns hyperglycemic or the iteration budget runs out.

#include <cstdint>
#include <string>
#include <vector>

#include "riskprof/data.hpp"
#include "riskprof/forecast.hpp"

namespace riskprof {

struct AttackConstraints {
    double cgm_low = 125.0;       // fasting 125, postprandial 180
    double cgm_high = kCgmMax;
    std::size_t max_iters = 200;
    double step = 5.0;            // mg/dL per greedy move

    static AttackConstraints for_context(MealContext ctx, const StateThresholds& th,
                                         double step = 5.0, std::size_t max_iters = 200,
                                         double cgm_high = kCgmMax);
};

enum class AttackResult { Skipped, Success, Failure };

const char* to_string(AttackResult r);
AttackResult attack_result_from_string(const std::string& s);

struct AttackOutcome {
    std::string patient_id;
    std::int64_t start_timestamp = 0;
    std::int64_t target_timestamp = 0;
    MealContext context = MealContext::Fasting;
    AttackResult result = AttackResult::Skipped;
    std::vector<double> adversarial_cgm;  // history_len values, empty when skipped
    double benign_prediction = 0.0;
    double adversarial_prediction = 0.0;
    DiagnosticState benign_state = DiagnosticState::Normal;
    DiagnosticState adversarial_state = DiagnosticState::Normal;
    std::size_t iterations_used = 0;

    bool success() const { return result == AttackResult::Success; }
};

/// Applies an outcome's manipulated cgm values onto a copy of the benign window.
FeatureWindow apply_adversarial_cgm(const FeatureWindow& window,
                                    const AttackOutcome& outcome);

/// Windows whose benign prediction is already Hyper are reported as Skipped.
/// Every applied move keeps the prediction non-decreasing; manipulated values
/// stay inside [cgm_low, cgm_high]; non-cgm features are never touched.
AttackOutcome craft_adversarial(const ForecastModel& model, const FeatureWindow& window,
                                MealContext context, const AttackConstraints& constraints,
                                const StateThresholds& th = {});

/// Crafts an outcome for every window of the trace, stamped with patient and
/// per-window meal context.
std::vector<AttackOutcome> attack_trace(const ForecastModel& model,
                                        const PatientTrace& trace,
                                        std::size_t history_len, std::size_t horizon,
                                        double step, std::size_t max_iters,
                                        const StateThresholds& th = {},
                                        double cgm_high = kCgmMax);

struct SuccessCell {
    std::size_t attackable = 0;
    std::size_t successes = 0;
    bool empty() const { return attackable == 0; }
    double rate() const;          // in [0, 1]; throws when empty
    double percent() const { return 100.0 * rate(); }
};

struct PatientSuccessRates {
    std::string patient_id;
    // [benign state: 0 = Normal, 1 = Hypo] x [context: 0 = Fasting, 1 = Postprandial]
    SuccessCell cells[2][2];
    SuccessCell overall;
};

std::vector<PatientSuccessRates> aggregate_success_rates(
    const std::vector<AttackOutcome>& outcomes);

/// One call per patient trace, aggregated into the Appendix-style breakdown.
std::vector<PatientSuccessRates> attack_success_rates(
    const ForecastModel& model, const std::vector<PatientTrace>& test_traces,
    std::size_t history_len, std::size_t horizon, double step, std::size_t max_iters,
    const StateThresholds& th = {});

std::string outcomes_to_jsonl(const std::vector<AttackOutcome>& outcomes);
std::vector<AttackOutcome> outcomes_from_jsonl(const std::string& text);
void save_outcomes_jsonl(const std::vector<AttackOutcome>& outcomes, const std::string& path);
std::vector<AttackOutcome> load_outcomes_jsonl(const std::string& path);

void write_success_rate_csv(const std::vector<PatientSuccessRates>& rates,
                            const std::string& path);
std::vector<PatientSuccessRates> load_success_rate_csv(const std::string& path);

}  // namespace riskprof
