#include "riskprof/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace riskprof {

const char* to_string(Subset s) {
    switch (s) {
        case Subset::A: return "A";
        case Subset::B: return "B";
        default: return "synthetic";
    }
}

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

const char* to_string(MealContext c) {
    return c == MealContext::Fasting ? "fasting" : "postprandial";
}

const char* to_string(DiagnosticState d) {
    switch (d) {
        case DiagnosticState::Hypo: return "hypo";
        case DiagnosticState::Normal: return "normal";
        default: return "hyper";
    }
}

Subset subset_from_string(const std::string& s) {
    if (s == "A" || s == "a") return Subset::A;
    if (s == "B" || s == "b") return Subset::B;
    if (s == "synthetic") return Subset::Synthetic;
    throw std::invalid_argument("unknown subset: " + s);
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split: " + s);
}

MealContext meal_context_from_string(const std::string& s) {
    if (s == "fasting") return MealContext::Fasting;
    if (s == "postprandial") return MealContext::Postprandial;
    throw std::invalid_argument("unknown meal context: " + s);
}

DiagnosticState diagnostic_state_from_string(const std::string& s) {
    if (s == "hypo") return DiagnosticState::Hypo;
    if (s == "normal") return DiagnosticState::Normal;
    if (s == "hyper") return DiagnosticState::Hyper;
    throw std::invalid_argument("unknown diagnostic state: " + s);
}

std::vector<std::size_t> gap_indices(const PatientTrace& trace) {
    std::vector<std::size_t> out;
    const std::int64_t limit = 2 * trace.cadence;
    for (std::size_t i = 0; i + 1 < trace.samples.size(); ++i) {
        if (trace.samples[i + 1].timestamp - trace.samples[i].timestamp > limit)
            out.push_back(i);
    }
    return out;
}

DiagnosticState classify_state(double glucose, MealContext context,
                               const StateThresholds& th) {
    const double hyper =
        context == MealContext::Fasting ? th.hyper_fasting : th.hyper_postprandial;
    if (glucose > hyper) return DiagnosticState::Hyper;
    if (glucose < th.hypo) return DiagnosticState::Hypo;
    return DiagnosticState::Normal;
}

MealContext meal_context_at(const PatientTrace& trace, std::int64_t t,
                            const StateThresholds& th) {
    if (trace.samples.empty()) throw std::out_of_range("meal_context_at: empty trace");
    if (t < trace.samples.front().timestamp || t > trace.samples.back().timestamp)
        throw std::out_of_range("meal_context_at: timestamp " + std::to_string(t) +
                                " outside trace span");
    for (auto it = trace.samples.rbegin(); it != trace.samples.rend(); ++it) {
        if (it->timestamp > t) continue;
        if (it->timestamp <= t - th.postprandial_window) break;
        if (it->carbs > 0.0) return MealContext::Postprandial;
    }
    return MealContext::Fasting;
}

std::vector<MealContext> meal_contexts(const PatientTrace& trace,
                                       const StateThresholds& th) {
    std::vector<MealContext> out(trace.samples.size(), MealContext::Fasting);
    std::int64_t last_carb = std::numeric_limits<std::int64_t>::min();
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
        const auto& s = trace.samples[i];
        if (s.carbs > 0.0) last_carb = s.timestamp;
        if (last_carb > s.timestamp - th.postprandial_window)
            out[i] = MealContext::Postprandial;
    }
    return out;
}

std::vector<FeatureWindow> windowize(const PatientTrace& trace,
                                     std::size_t history_len, std::size_t horizon) {
    if (history_len < 1 || horizon < 1)
        throw std::invalid_argument("windowize: history_len and horizon must be >= 1");
    const std::size_t need = history_len + horizon;
    const std::size_t n = trace.samples.size();
    if (n < need)
        throw std::runtime_error("windowize: trace '" + trace.patient_id + "' has " +
                                 std::to_string(n) + " samples, needs at least " +
                                 std::to_string(need));
    const std::int64_t max_delta = 2 * trace.cadence;
    std::vector<FeatureWindow> out;
    out.reserve(n - need + 1);
    for (std::size_t i = 0; i + need <= n; ++i) {
        const std::size_t target = i + need - 1;
        bool contiguous = true;
        for (std::size_t j = i; j < target; ++j) {
            if (trace.samples[j + 1].timestamp - trace.samples[j].timestamp > max_delta) {
                contiguous = false;
                break;
            }
        }
        if (!contiguous) continue;
        FeatureWindow w;
        w.history_len = history_len;
        w.values.resize(history_len * kFeaturesPerStep);
        for (std::size_t s = 0; s < history_len; ++s) {
            const auto& sample = trace.samples[i + s];
            w.values[s * kFeaturesPerStep + 0] = sample.cgm;
            w.values[s * kFeaturesPerStep + 1] = sample.basal;
            w.values[s * kFeaturesPerStep + 2] = sample.bolus;
            w.values[s * kFeaturesPerStep + 3] = sample.carbs;
        }
        w.start_timestamp = trace.samples[i].timestamp;
        w.last_timestamp = trace.samples[i + history_len - 1].timestamp;
        w.target_timestamp = trace.samples[target].timestamp;
        w.target_cgm = trace.samples[target].cgm;
        out.push_back(std::move(w));
    }
    return out;
}

NormalAbnormalRatio normal_to_abnormal_ratio(const PatientTrace& trace,
                                             const StateThresholds& th) {
    if (trace.samples.empty())
        throw std::invalid_argument("normal_to_abnormal_ratio: empty trace");
    NormalAbnormalRatio r;
    const auto contexts = meal_contexts(trace, th);
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
        const auto st = classify_state(trace.samples[i].cgm, contexts[i], th);
        if (st == DiagnosticState::Normal)
            ++r.normal;
        else
            ++r.abnormal;
    }
    if (r.abnormal == 0) {
        r.unbounded = true;
    } else {
        r.value = static_cast<double>(r.normal) / static_cast<double>(r.abnormal);
    }
    return r;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& s, const std::string& file, std::size_t row,
                    const std::string& col) {
    double v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
        throw std::runtime_error(file + " row " + std::to_string(row) +
                                 ": cannot parse " + col + " value '" + s + "'");
    return v;
}

std::int64_t parse_int(const std::string& s, const std::string& file, std::size_t row,
                       const std::string& col) {
    std::int64_t v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
        throw std::runtime_error(file + " row " + std::to_string(row) +
                                 ": cannot parse " + col + " value '" + s + "'");
    return v;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

}  // namespace

PatientTrace load_trace_csv(const std::string& path, const std::string& patient_id,
                            Subset subset, Split split, std::int64_t cadence) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);
    PatientTrace trace;
    trace.patient_id = patient_id;
    trace.subset = subset;
    trace.split = split;
    trace.cadence = cadence;

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    auto header = split_csv_line(line);
    const std::vector<std::string> required = {"timestamp", "cgm", "basal", "bolus", "carbs"};
    if (header.size() < required.size())
        throw std::runtime_error(path + ": header must start with timestamp,cgm,basal,bolus,carbs");
    for (std::size_t i = 0; i < required.size(); ++i) {
        if (header[i] != required[i])
            throw std::runtime_error(path + ": expected header column '" + required[i] +
                                     "' at position " + std::to_string(i) + ", got '" +
                                     header[i] + "'");
    }
    for (std::size_t i = required.size(); i < header.size(); ++i) {
        trace.extra_names.push_back(header[i]);
        trace.extra_values.emplace_back();
    }

    std::size_t row = 0;  // 1-based data row index
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw std::runtime_error(path + " row " + std::to_string(row) + ": expected " +
                                     std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size()));
        GlucoseSample s;
        s.timestamp = parse_int(fields[0], path, row, "timestamp");
        s.cgm = parse_double(fields[1], path, row, "cgm");
        s.basal = parse_double(fields[2], path, row, "basal");
        s.bolus = parse_double(fields[3], path, row, "bolus");
        s.carbs = parse_double(fields[4], path, row, "carbs");
        if (!(s.cgm >= 0.0 && s.cgm <= kCgmMax))
            throw std::runtime_error(path + " row " + std::to_string(row) + ": cgm " +
                                     format_double(s.cgm) + " outside [0, 499]");
        if (s.basal < 0.0 || s.bolus < 0.0 || s.carbs < 0.0)
            throw std::runtime_error(path + " row " + std::to_string(row) +
                                     ": negative basal/bolus/carbs");
        if (!trace.samples.empty() && s.timestamp <= trace.samples.back().timestamp)
            throw std::runtime_error(path + " row " + std::to_string(row) +
                                     ": timestamp not strictly increasing");
        for (std::size_t i = 0; i < trace.extra_names.size(); ++i)
            trace.extra_values[i].push_back(
                parse_double(fields[required.size() + i], path, row, trace.extra_names[i]));
        trace.samples.push_back(s);
    }
    return trace;
}

void write_trace_csv(const PatientTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace file: " + path);
    out << "timestamp,cgm,basal,bolus,carbs";
    for (const auto& name : trace.extra_names) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
        const auto& s = trace.samples[i];
        out << s.timestamp << ',' << format_double(s.cgm) << ',' << format_double(s.basal)
            << ',' << format_double(s.bolus) << ',' << format_double(s.carbs);
        for (const auto& col : trace.extra_values) out << ',' << format_double(col[i]);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<PatientTrace> load_traces(const std::string& path, TraceFormat format) {
    if (format == TraceFormat::Csv) {
        const std::string stem = fs::path(path).stem().string();
        return {load_trace_csv(path, stem, Subset::Synthetic, Split::Train, 300)};
    }
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open cohort manifest: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": manifest parse error: " + e.what());
    }
    if (!doc.contains("patients") || !doc["patients"].is_array())
        throw std::runtime_error(path + ": manifest needs a 'patients' array");
    const fs::path base = fs::path(path).parent_path();
    std::vector<PatientTrace> traces;
    for (const auto& p : doc["patients"]) {
        const std::string id = p.at("patient_id").get<std::string>();
        const auto subset = subset_from_string(p.at("subset").get<std::string>());
        const auto split = split_from_string(p.at("split").get<std::string>());
        const std::int64_t cadence = p.value("cadence", std::int64_t{300});
        fs::path file = p.at("path").get<std::string>();
        if (file.is_relative()) file = base / file;
        traces.push_back(load_trace_csv(file.string(), id, subset, split, cadence));
    }
    return traces;
}

std::string write_cohort(const std::vector<PatientTrace>& traces, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["patients"] = nlohmann::ordered_json::array();
    for (const auto& t : traces) {
        const std::string name = t.patient_id + "_" + to_string(t.split) + ".csv";
        write_trace_csv(t, (fs::path(dir) / name).string());
        nlohmann::ordered_json entry;
        entry["patient_id"] = t.patient_id;
        entry["subset"] = to_string(t.subset);
        entry["split"] = to_string(t.split);
        entry["path"] = name;
        entry["cadence"] = t.cadence;
        manifest["patients"].push_back(entry);
    }
    const std::string manifest_path = (fs::path(dir) / "cohort.json").string();
    std::ofstream out(manifest_path);
    out << manifest.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + manifest_path);
    return manifest_path;
}

std::vector<std::string> sorted_patient_ids(const std::vector<PatientTrace>& traces) {
    std::vector<std::string> ids;
    for (const auto& t : traces) ids.push_back(t.patient_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

const PatientTrace* find_trace(const std::vector<PatientTrace>& traces,
                               const std::string& patient_id, Split split) {
    for (const auto& t : traces)
        if (t.patient_id == patient_id && t.split == split) return &t;
    return nullptr;
}

}  // namespace riskprof
