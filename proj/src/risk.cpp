#include "riskprof/risk.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace riskprof {

SeverityTable SeverityTable::defaults(double same_state) {
    SeverityTable t{};
    const auto hypo = static_cast<int>(DiagnosticState::Hypo);
    const auto normal = static_cast<int>(DiagnosticState::Normal);
    const auto hyper = static_cast<int>(DiagnosticState::Hyper);
    t.coef[hypo][hyper] = 64.0;
    t.coef[normal][hyper] = 32.0;
    t.coef[hypo][normal] = 16.0;
    t.coef[hyper][hypo] = 8.0;
    t.coef[hyper][normal] = 4.0;
    t.coef[normal][hypo] = 2.0;
    t.coef[hypo][hypo] = same_state;
    t.coef[normal][normal] = same_state;
    t.coef[hyper][hyper] = same_state;
    return t;
}

double SeverityTable::severity(DiagnosticState benign, DiagnosticState adversarial) const {
    return coef[static_cast<int>(benign)][static_cast<int>(adversarial)];
}

void SeverityTable::validate() const {
    for (int b = 0; b < 3; ++b)
        for (int a = 0; a < 3; ++a)
            if (!(coef[b][a] > 0.0))
                throw std::invalid_argument("severity coefficients must be positive");
}

double magnitude(double benign_prediction, double adversarial_prediction) {
    const double gap = benign_prediction - adversarial_prediction;
    return gap * gap;
}

double instantaneous_risk(const SeverityTable& table, double benign_prediction,
                          double adversarial_prediction, DiagnosticState benign_state,
                          DiagnosticState adversarial_state) {
    return table.severity(benign_state, adversarial_state) *
           magnitude(benign_prediction, adversarial_prediction);
}

RiskProfile build_risk_profile(const PatientTrace& trace,
                               const std::vector<AttackOutcome>& outcomes,
                               const SeverityTable& table, const StateThresholds& th) {
    RiskProfile profile;
    profile.patient_id = trace.patient_id;
    profile.timestamps.reserve(outcomes.size());
    profile.values.reserve(outcomes.size());
    for (const auto& o : outcomes) {
        if (o.patient_id != trace.patient_id)
            throw std::runtime_error("build_risk_profile: outcome for patient '" +
                                     o.patient_id + "' does not match trace '" +
                                     trace.patient_id + "'");
        profile.timestamps.push_back(o.target_timestamp);
        if (o.result == AttackResult::Skipped) {
            profile.values.push_back(0.0);
            continue;
        }
        const auto benign = classify_state(o.benign_prediction, o.context, th);
        const auto adversarial = classify_state(o.adversarial_prediction, o.context, th);
        profile.values.push_back(instantaneous_risk(
            table, o.benign_prediction, o.adversarial_prediction, benign, adversarial));
    }
    return profile;
}

void write_risk_profile_csv(const RiskProfile& profile, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write risk profile: " + path);
    out << "timestamp,risk\n";
    char buf[64];
    for (std::size_t i = 0; i < profile.values.size(); ++i) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), profile.values[i]);
        (void)ec;
        out << profile.timestamps[i] << ',' << std::string_view(buf, p - buf) << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

RiskProfile load_risk_profile_csv(const std::string& path, const std::string& patient_id) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open risk profile: " + path);
    RiskProfile profile;
    profile.patient_id = patient_id;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error(path + ": malformed row '" + line + "'");
        profile.timestamps.push_back(std::stoll(line.substr(0, comma)));
        profile.values.push_back(std::stod(line.substr(comma + 1)));
    }
    return profile;
}

}  // namespace riskprof
