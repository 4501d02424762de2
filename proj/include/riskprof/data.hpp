#pragma once
// Patient trace data model: glucose samples, diagnostic states, meal context,
// feature windows, and CSV/manifest ingestion.

#include <cstdint>
#include <string>
#include <vector>

namespace riskprof {

enum class Subset { A, B, Synthetic };
enum class Split { Train, Test };
enum class MealContext { Fasting, Postprandial };
enum class DiagnosticState { Hypo, Normal, Hyper };

const char* to_string(Subset s);
const char* to_string(Split s);
const char* to_string(MealContext c);
const char* to_string(DiagnosticState d);
Subset subset_from_string(const std::string& s);
Split split_from_string(const std::string& s);
MealContext meal_context_from_string(const std::string& s);
DiagnosticState diagnostic_state_from_string(const std::string& s);

/// Highest glucose value the pipeline ever represents, in mg/dL.
inline constexpr double kCgmMax = 499.0;

struct GlucoseSample {
    std::int64_t timestamp = 0;  // seconds since trace epoch
    double cgm = 0.0;            // mg/dL, within [0, kCgmMax]
    double basal = 0.0;          // units/hr
    double bolus = 0.0;          // units, 0 if none
    double carbs = 0.0;          // grams, 0 if none
};

struct PatientTrace {
    std::string patient_id;
    Subset subset = Subset::Synthetic;
    Split split = Split::Train;
    std::int64_t cadence = 300;  // nominal seconds between samples
    std::vector<GlucoseSample> samples;
    // Optional columns (heart rate, sleep, ...) are kept verbatim but unused.
    std::vector<std::string> extra_names;
    std::vector<std::vector<double>> extra_values;  // one vector per extra column
};

/// Indices i where timestamp[i+1] - timestamp[i] exceeds 2x cadence.
std::vector<std::size_t> gap_indices(const PatientTrace& trace);

struct StateThresholds {
    double hypo = 70.0;                      // mg/dL, below -> Hypo
    double hyper_fasting = 125.0;            // mg/dL, above -> Hyper while fasting
    double hyper_postprandial = 180.0;       // mg/dL, above -> Hyper postprandial
    std::int64_t postprandial_window = 7200; // seconds after a carb intake
};

DiagnosticState classify_state(double glucose, MealContext context,
                               const StateThresholds& th = {});

/// Postprandial iff some carb-intake event lies in (t - window, t].
/// Throws std::out_of_range when t is outside the trace span.
MealContext meal_context_at(const PatientTrace& trace, std::int64_t t,
                            const StateThresholds& th = {});

/// Per-sample meal context for a whole trace in one left-to-right sweep.
std::vector<MealContext> meal_contexts(const PatientTrace& trace,
                                       const StateThresholds& th = {});

inline constexpr std::size_t kFeaturesPerStep = 4;  // cgm, basal, bolus, carbs

/// history_len consecutive samples flattened time-major; the regression
/// target is the cgm value `horizon` steps past the last history sample.
struct FeatureWindow {
    std::vector<double> values;  // history_len * kFeaturesPerStep
    std::size_t history_len = 0;
    std::int64_t start_timestamp = 0;
    std::int64_t last_timestamp = 0;
    std::int64_t target_timestamp = 0;
    double target_cgm = 0.0;

    double cgm(std::size_t step) const { return values[step * kFeaturesPerStep]; }
    void set_cgm(std::size_t step, double v) { values[step * kFeaturesPerStep] = v; }
};

/// Windows that straddle a recording gap (> 2x cadence anywhere between the
/// first history sample and the target sample) are dropped.
/// Throws std::runtime_error when the trace is too short for a single window.
std::vector<FeatureWindow> windowize(const PatientTrace& trace,
                                     std::size_t history_len,
                                     std::size_t horizon);

struct NormalAbnormalRatio {
    std::size_t normal = 0;
    std::size_t abnormal = 0;   // Hypo + Hyper
    bool unbounded = false;     // no abnormal samples at all
    double value = 0.0;         // normal / abnormal, only when !unbounded
};

NormalAbnormalRatio normal_to_abnormal_ratio(const PatientTrace& trace,
                                             const StateThresholds& th = {});

enum class TraceFormat { Csv, Manifest };

/// Csv: one trace from one file (id from metadata defaults).
/// Manifest: JSON cohort manifest listing per-patient CSV files.
std::vector<PatientTrace> load_traces(const std::string& path, TraceFormat format);

PatientTrace load_trace_csv(const std::string& path, const std::string& patient_id,
                            Subset subset, Split split, std::int64_t cadence);

void write_trace_csv(const PatientTrace& trace, const std::string& path);

/// Writes per-trace CSVs plus a cohort manifest into `dir`.
/// Returns the manifest path.
std::string write_cohort(const std::vector<PatientTrace>& traces, const std::string& dir);

std::vector<std::string> sorted_patient_ids(const std::vector<PatientTrace>& traces);
const PatientTrace* find_trace(const std::vector<PatientTrace>& traces,
                               const std::string& patient_id, Split split);

}  // namespace riskprof
