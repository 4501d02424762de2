#include "riskprof/attack.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace riskprof {

AttackConstraints AttackConstraints::for_context(MealContext ctx, const StateThresholds& th,
                                                 double step, std::size_t max_iters,
                                                 double cgm_high) {
    AttackConstraints c;
    c.cgm_low = ctx == MealContext::Fasting ? th.hyper_fasting : th.hyper_postprandial;
    c.cgm_high = cgm_high;
    c.step = step;
    c.max_iters = max_iters;
    return c;
}

const char* to_string(AttackResult r) {
    switch (r) {
        case AttackResult::Skipped: return "skipped";
        case AttackResult::Success: return "success";
        default: return "failure";
    }
}

AttackResult attack_result_from_string(const std::string& s) {
    if (s == "skipped") return AttackResult::Skipped;
    if (s == "success") return AttackResult::Success;
    if (s == "failure") return AttackResult::Failure;
    throw std::invalid_argument("unknown attack result: " + s);
}

FeatureWindow apply_adversarial_cgm(const FeatureWindow& window,
                                    const AttackOutcome& outcome) {
    FeatureWindow adv = window;
    if (outcome.adversarial_cgm.empty()) return adv;
    if (outcome.adversarial_cgm.size() != window.history_len)
        throw std::invalid_argument("apply_adversarial_cgm: cgm length mismatch");
    for (std::size_t s = 0; s < window.history_len; ++s)
        adv.set_cgm(s, outcome.adversarial_cgm[s]);
    return adv;
}

AttackOutcome craft_adversarial(const ForecastModel& model, const FeatureWindow& window,
                                MealContext context, const AttackConstraints& constraints,
                                const StateThresholds& th) {
    if (constraints.step <= 0.0)
        throw std::invalid_argument("craft_adversarial: step must be positive");
    if (constraints.cgm_low > constraints.cgm_high)
        throw std::invalid_argument("craft_adversarial: empty cgm range");

    AttackOutcome outcome;
    outcome.start_timestamp = window.start_timestamp;
    outcome.target_timestamp = window.target_timestamp;
    outcome.context = context;
    outcome.benign_prediction = predict(model, window);
    outcome.benign_state = classify_state(outcome.benign_prediction, context, th);
    outcome.adversarial_prediction = outcome.benign_prediction;
    outcome.adversarial_state = outcome.benign_state;

    if (outcome.benign_state == DiagnosticState::Hyper) {
        outcome.result = AttackResult::Skipped;
        return outcome;
    }

    FeatureWindow x = window;
    double pred = outcome.benign_prediction;
    const std::size_t steps = window.history_len;
    std::vector<std::size_t> order(steps);
    std::size_t stall = 0;

    while (outcome.iterations_used < constraints.max_iters) {
        if (classify_state(pred, context, th) == DiagnosticState::Hyper) break;
        const auto grad = gradient_wrt_cgm(model, x);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (grad[a] != grad[b]) return grad[a] > grad[b];
            return a < b;  // ties resolved toward the earliest timestep
        });
        bool applied = false;
        double gain = 0.0;
        for (std::size_t s : order) {
            if (!(grad[s] > 0.0)) break;
            const double old_v = x.cgm(s);
            const double new_v = std::clamp(old_v + constraints.step, constraints.cgm_low,
                                            constraints.cgm_high);
            if (new_v == old_v) continue;
            x.set_cgm(s, new_v);
            const double p = predict(model, x);
            if (p >= pred) {
                gain = p - pred;
                pred = p;
                applied = true;
                break;
            }
            x.set_cgm(s, old_v);  // the move was not an ascent; try the next coordinate
        }
        if (!applied) break;
        ++outcome.iterations_used;
        if (gain < 1e-9) {
            if (++stall >= 3) break;  // prediction has plateaued
        } else {
            stall = 0;
        }
    }

    outcome.adversarial_prediction = pred;
    outcome.adversarial_state = classify_state(pred, context, th);
    outcome.result = outcome.adversarial_state == DiagnosticState::Hyper
                         ? AttackResult::Success
                         : AttackResult::Failure;
    outcome.adversarial_cgm.resize(steps);
    for (std::size_t s = 0; s < steps; ++s) outcome.adversarial_cgm[s] = x.cgm(s);
    return outcome;
}

std::vector<AttackOutcome> attack_trace(const ForecastModel& model,
                                        const PatientTrace& trace,
                                        std::size_t history_len, std::size_t horizon,
                                        double step, std::size_t max_iters,
                                        const StateThresholds& th, double cgm_high) {
    const auto windows = windowize(trace, history_len, horizon);
    std::vector<AttackOutcome> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        const MealContext ctx = meal_context_at(trace, w.target_timestamp, th);
        const auto constraints =
            AttackConstraints::for_context(ctx, th, step, max_iters, cgm_high);
        auto o = craft_adversarial(model, w, ctx, constraints, th);
        o.patient_id = trace.patient_id;
        out.push_back(std::move(o));
    }
    return out;
}

double SuccessCell::rate() const {
    if (empty()) throw std::logic_error("success rate of an empty cell");
    return static_cast<double>(successes) / static_cast<double>(attackable);
}

std::vector<PatientSuccessRates> aggregate_success_rates(
    const std::vector<AttackOutcome>& outcomes) {
    std::map<std::string, PatientSuccessRates> by_patient;
    for (const auto& o : outcomes) {
        auto& entry = by_patient[o.patient_id];
        entry.patient_id = o.patient_id;
        if (o.result == AttackResult::Skipped) continue;
        const std::size_t srow = o.benign_state == DiagnosticState::Normal ? 0 : 1;
        const std::size_t ccol = o.context == MealContext::Fasting ? 0 : 1;
        auto& cell = entry.cells[srow][ccol];
        ++cell.attackable;
        ++entry.overall.attackable;
        if (o.success()) {
            ++cell.successes;
            ++entry.overall.successes;
        }
    }
    std::vector<PatientSuccessRates> out;
    for (auto& [id, rates] : by_patient) out.push_back(std::move(rates));
    return out;
}

std::vector<PatientSuccessRates> attack_success_rates(
    const ForecastModel& model, const std::vector<PatientTrace>& test_traces,
    std::size_t history_len, std::size_t horizon, double step, std::size_t max_iters,
    const StateThresholds& th) {
    std::vector<AttackOutcome> all;
    for (const auto& t : test_traces) {
        auto outcomes = attack_trace(model, t, history_len, horizon, step, max_iters, th);
        all.insert(all.end(), std::make_move_iterator(outcomes.begin()),
                   std::make_move_iterator(outcomes.end()));
    }
    return aggregate_success_rates(all);
}

namespace {

nlohmann::ordered_json outcome_to_json(const AttackOutcome& o) {
    nlohmann::ordered_json j;
    j["patient_id"] = o.patient_id;
    j["start_timestamp"] = o.start_timestamp;
    j["target_timestamp"] = o.target_timestamp;
    j["context"] = to_string(o.context);
    j["result"] = to_string(o.result);
    j["benign_prediction"] = o.benign_prediction;
    j["adversarial_prediction"] = o.adversarial_prediction;
    j["benign_state"] = to_string(o.benign_state);
    j["adversarial_state"] = to_string(o.adversarial_state);
    j["iterations_used"] = o.iterations_used;
    j["adversarial_cgm"] = o.adversarial_cgm;
    return j;
}

AttackOutcome outcome_from_json(const nlohmann::json& j) {
    AttackOutcome o;
    o.patient_id = j.at("patient_id").get<std::string>();
    o.start_timestamp = j.at("start_timestamp").get<std::int64_t>();
    o.target_timestamp = j.at("target_timestamp").get<std::int64_t>();
    o.context = meal_context_from_string(j.at("context").get<std::string>());
    o.result = attack_result_from_string(j.at("result").get<std::string>());
    o.benign_prediction = j.at("benign_prediction").get<double>();
    o.adversarial_prediction = j.at("adversarial_prediction").get<double>();
    o.benign_state = diagnostic_state_from_string(j.at("benign_state").get<std::string>());
    o.adversarial_state =
        diagnostic_state_from_string(j.at("adversarial_state").get<std::string>());
    o.iterations_used = j.at("iterations_used").get<std::size_t>();
    o.adversarial_cgm = j.at("adversarial_cgm").get<std::vector<double>>();
    return o;
}

std::string format_percent(const SuccessCell& cell) {
    if (cell.empty()) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", cell.percent());
    return buf;
}

}  // namespace

std::string outcomes_to_jsonl(const std::vector<AttackOutcome>& outcomes) {
    std::string text;
    for (const auto& o : outcomes) {
        text += outcome_to_json(o).dump();
        text += '\n';
    }
    return text;
}

std::vector<AttackOutcome> outcomes_from_jsonl(const std::string& text) {
    std::vector<AttackOutcome> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(outcome_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

void save_outcomes_jsonl(const std::vector<AttackOutcome>& outcomes,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write outcomes file: " + path);
    out << outcomes_to_jsonl(outcomes);
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<AttackOutcome> load_outcomes_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open outcomes file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return outcomes_from_jsonl(text);
}

void write_success_rate_csv(const std::vector<PatientSuccessRates>& rates,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write success rate file: " + path);
    out << "patient_id,benign_state,context,attackable,successes,rate_percent\n";
    static const char* state_names[2] = {"normal", "hypo"};
    static const char* context_names[2] = {"fasting", "postprandial"};
    for (const auto& r : rates) {
        for (std::size_t srow = 0; srow < 2; ++srow)
            for (std::size_t ccol = 0; ccol < 2; ++ccol) {
                const auto& cell = r.cells[srow][ccol];
                out << r.patient_id << ',' << state_names[srow] << ',' << context_names[ccol]
                    << ',' << cell.attackable << ',' << cell.successes << ','
                    << format_percent(cell) << '\n';
            }
        out << r.patient_id << ",any,any," << r.overall.attackable << ','
            << r.overall.successes << ',' << format_percent(r.overall) << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<PatientSuccessRates> load_success_rate_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open success rate file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    std::map<std::string, PatientSuccessRates> by_patient;
    std::vector<std::string> order;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id, state, context, attackable, successes, rate;
        std::getline(row, id, ',');
        std::getline(row, state, ',');
        std::getline(row, context, ',');
        std::getline(row, attackable, ',');
        std::getline(row, successes, ',');
        std::getline(row, rate, ',');
        if (!by_patient.count(id)) order.push_back(id);
        auto& entry = by_patient[id];
        entry.patient_id = id;
        SuccessCell cell;
        cell.attackable = std::stoull(attackable);
        cell.successes = std::stoull(successes);
        if (state == "any") {
            entry.overall = cell;
        } else {
            const std::size_t srow = state == "normal" ? 0 : 1;
            const std::size_t ccol = context == "fasting" ? 0 : 1;
            entry.cells[srow][ccol] = cell;
        }
    }
    std::vector<PatientSuccessRates> out;
    for (const auto& id : order) out.push_back(by_patient[id]);
    return out;
}

}  // namespace riskprof
