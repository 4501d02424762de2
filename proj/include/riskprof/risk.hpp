#pragma once
// Instantaneous risk of a manipulated prediction: severity-weighted squared
// deviation between the benign and adversarial forecasts, assembled into a
// per-victim time series.

#include <cstdint>
#include <string>
#include <vector>

#include "riskprof/attack.hpp"
#include "riskprof/data.hpp"

namespace riskprof {

struct SeverityTable {
    // Indexed [benign][adversarial] by DiagnosticState order (Hypo, Normal, Hyper).
    double coef[3][3];

    static SeverityTable defaults(double same_state = 1.0);
    double severity(DiagnosticState benign, DiagnosticState adversarial) const;
    void validate() const;  // throws unless every coefficient is > 0
};

/// Z_t: squared gap between benign and adversarial predictions.
double magnitude(double benign_prediction, double adversarial_prediction);

/// R_t = S * Z_t.
double instantaneous_risk(const SeverityTable& table, double benign_prediction,
                          double adversarial_prediction, DiagnosticState benign_state,
                          DiagnosticState adversarial_state);

struct RiskProfile {
    std::string patient_id;
    std::vector<std::int64_t> timestamps;
    std::vector<double> values;
};

/// One R_t per attack outcome, in outcome order; skipped windows contribute 0.
/// States are rederived from the stored predictions and per-window context.
/// Throws std::runtime_error when outcomes belong to a different patient.
RiskProfile build_risk_profile(const PatientTrace& trace,
                               const std::vector<AttackOutcome>& outcomes,
                               const SeverityTable& table,
                               const StateThresholds& th = {});

void write_risk_profile_csv(const RiskProfile& profile, const std::string& path);
RiskProfile load_risk_profile_csv(const std::string& path, const std::string& patient_id);

}  // namespace riskprof
