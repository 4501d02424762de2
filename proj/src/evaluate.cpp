#include "riskprof/evaluate.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace riskprof {

ConfusionCounts confusion(const std::vector<VerdictLabel>& verdicts,
                          const std::vector<VerdictLabel>& truths) {
    if (verdicts.empty()) throw std::invalid_argument("confusion: empty test set");
    if (verdicts.size() != truths.size())
        throw std::invalid_argument("confusion: verdict/truth size mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const bool predicted = verdicts[i] == VerdictLabel::Malicious;
        const bool actual = truths[i] == VerdictLabel::Malicious;
        if (predicted && actual)
            ++c.tp;
        else if (predicted && !actual)
            ++c.fp;
        else if (!predicted && actual)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

MetricSet metrics(const ConfusionCounts& c) {
    MetricSet m;
    if (c.tp + c.fn > 0)
        m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    if (c.tp + c.fp > 0)
        m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (m.recall && m.precision && (*m.recall + *m.precision) > 0.0)
        m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    return m;
}

std::optional<double> mean_of_defined(const std::vector<std::optional<double>>& values) {
    std::vector<double> defined;
    for (const auto& v : values)
        if (v) defined.push_back(*v);
    if (defined.empty()) return std::nullopt;
    std::sort(defined.begin(), defined.end());
    double sum = 0.0;
    for (double v : defined) sum += v;
    return sum / static_cast<double>(defined.size());
}

namespace {

template <typename Model>
std::vector<VerdictLabel> score_pool(const Model& model,
                                     const std::vector<TestSample>& pool) {
    std::vector<VerdictLabel> out;
    out.reserve(pool.size());
    for (const auto& s : pool) out.push_back(verdict(model, s.features));
    return out;
}

ExperimentCell score_cell(const std::string& detector, const StrategyInputs& strategy,
                          const std::vector<TestSample>& pool,
                          const ExperimentConfig& config) {
    ExperimentCell cell;
    cell.detector = detector;
    cell.strategy = strategy.kind;

    std::vector<VerdictLabel> truths;
    truths.reserve(pool.size());
    for (const auto& s : pool) truths.push_back(s.truth);

    for (const auto& run : strategy.runs) {
        std::vector<VerdictLabel> verdicts;
        if (detector == "knn") {
            const auto model = fit_knn(run.benign, run.malicious, config.knn);
            verdicts = score_pool(model, pool);
        } else {
            const auto model = fit_ocsvm(run.benign, config.ocsvm);
            verdicts = score_pool(model, pool);
        }
        const auto counts = confusion(verdicts, truths);
        cell.run_counts.push_back(counts);
        cell.run_metrics.push_back(metrics(counts));
        cell.counts.tp += counts.tp;
        cell.counts.fp += counts.fp;
        cell.counts.tn += counts.tn;
        cell.counts.fn += counts.fn;
        cell.train_benign += run.benign.size();
        cell.train_malicious += run.malicious.size();
        cell.cohorts.push_back(run.cohort);
        cell.run_verdicts.push_back(std::move(verdicts));
    }

    if (strategy.runs.size() == 1) {
        cell.m = cell.run_metrics.front();
    } else {
        std::vector<std::optional<double>> r, p, f;
        for (const auto& rm : cell.run_metrics) {
            r.push_back(rm.recall);
            p.push_back(rm.precision);
            f.push_back(rm.f1);
        }
        cell.m.recall = mean_of_defined(r);
        cell.m.precision = mean_of_defined(p);
        cell.m.f1 = mean_of_defined(f);
    }

    // Per-patient breakdown on the first run.
    std::map<std::string, std::pair<std::vector<VerdictLabel>, std::vector<VerdictLabel>>>
        by_patient;
    const auto& first = cell.run_verdicts.front();
    for (std::size_t i = 0; i < pool.size(); ++i) {
        auto& [v, t] = by_patient[pool[i].patient_id];
        v.push_back(first[i]);
        t.push_back(truths[i]);
    }
    for (const auto& [id, vt] : by_patient) {
        PatientMetrics pm;
        pm.patient_id = id;
        pm.counts = confusion(vt.first, vt.second);
        pm.m = metrics(pm.counts);
        cell.per_patient.push_back(std::move(pm));
    }
    return cell;
}

}  // namespace

ExperimentReport run_experiment(const std::vector<TestSample>& test_pool,
                                const std::vector<StrategyInputs>& strategies,
                                const ExperimentConfig& config) {
    if (test_pool.empty()) throw std::invalid_argument("run_experiment: empty test pool");
    ExperimentReport report;
    for (const auto& s : test_pool) {
        if (s.truth == VerdictLabel::Malicious)
            ++report.test_malicious;
        else
            ++report.test_benign;
    }
    std::vector<std::string> detectors;
    if (config.run_knn) detectors.push_back("knn");
    if (config.run_ocsvm) detectors.push_back("ocsvm");
    for (const auto& detector : detectors)
        for (const auto& strategy : strategies) {
            if (strategy.runs.empty())
                throw std::invalid_argument("run_experiment: strategy without cohorts");
            report.cells.push_back(score_cell(detector, strategy, test_pool, config));
        }
    return report;
}

namespace {

nlohmann::ordered_json optional_to_json(const std::optional<double>& v) {
    if (v) return *v;
    return "undefined";
}

std::optional<double> optional_from_json(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    return std::nullopt;
}

nlohmann::ordered_json counts_to_json(const ConfusionCounts& c) {
    return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

ConfusionCounts counts_from_json(const nlohmann::json& j) {
    ConfusionCounts c;
    c.tp = j.at("tp").get<std::size_t>();
    c.fp = j.at("fp").get<std::size_t>();
    c.tn = j.at("tn").get<std::size_t>();
    c.fn = j.at("fn").get<std::size_t>();
    return c;
}

nlohmann::ordered_json metricset_to_json(const MetricSet& m) {
    return {{"recall", optional_to_json(m.recall)},
            {"precision", optional_to_json(m.precision)},
            {"f1", optional_to_json(m.f1)}};
}

MetricSet metricset_from_json(const nlohmann::json& j) {
    MetricSet m;
    m.recall = optional_from_json(j.at("recall"));
    m.precision = optional_from_json(j.at("precision"));
    m.f1 = optional_from_json(j.at("f1"));
    return m;
}

std::string format_metric(const std::optional<double>& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return buf;
}

}  // namespace

std::string report_to_json(const ExperimentReport& report) {
    nlohmann::ordered_json j;
    j["test_benign"] = report.test_benign;
    j["test_malicious"] = report.test_malicious;
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& cell : report.cells) {
        nlohmann::ordered_json c;
        c["detector"] = cell.detector;
        c["strategy"] = to_string(cell.strategy);
        c["counts"] = counts_to_json(cell.counts);
        c["metrics"] = metricset_to_json(cell.m);
        c["train_benign"] = cell.train_benign;
        c["train_malicious"] = cell.train_malicious;
        c["cohorts"] = cell.cohorts;
        c["runs"] = nlohmann::ordered_json::array();
        for (std::size_t r = 0; r < cell.run_metrics.size(); ++r) {
            nlohmann::ordered_json run;
            run["counts"] = counts_to_json(cell.run_counts[r]);
            run["metrics"] = metricset_to_json(cell.run_metrics[r]);
            c["runs"].push_back(run);
        }
        c["per_patient"] = nlohmann::ordered_json::array();
        for (const auto& pm : cell.per_patient) {
            nlohmann::ordered_json p;
            p["patient_id"] = pm.patient_id;
            p["counts"] = counts_to_json(pm.counts);
            p["metrics"] = metricset_to_json(pm.m);
            c["per_patient"].push_back(p);
        }
        j["cells"].push_back(c);
    }
    j["provenance"] = report.provenance;
    return j.dump(2) + "\n";
}

ExperimentReport report_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ExperimentReport report;
    report.test_benign = j.at("test_benign").get<std::size_t>();
    report.test_malicious = j.at("test_malicious").get<std::size_t>();
    for (const auto& c : j.at("cells")) {
        ExperimentCell cell;
        cell.detector = c.at("detector").get<std::string>();
        cell.strategy = strategy_from_string(c.at("strategy").get<std::string>());
        cell.counts = counts_from_json(c.at("counts"));
        cell.m = metricset_from_json(c.at("metrics"));
        cell.train_benign = c.at("train_benign").get<std::size_t>();
        cell.train_malicious = c.at("train_malicious").get<std::size_t>();
        cell.cohorts = c.at("cohorts").get<std::vector<std::vector<std::string>>>();
        for (const auto& run : c.at("runs")) {
            cell.run_counts.push_back(counts_from_json(run.at("counts")));
            cell.run_metrics.push_back(metricset_from_json(run.at("metrics")));
        }
        for (const auto& p : c.at("per_patient")) {
            PatientMetrics pm;
            pm.patient_id = p.at("patient_id").get<std::string>();
            pm.counts = counts_from_json(p.at("counts"));
            pm.m = metricset_from_json(p.at("metrics"));
            cell.per_patient.push_back(std::move(pm));
        }
        report.cells.push_back(std::move(cell));
    }
    for (const auto& [k, v] : j.at("provenance").items())
        report.provenance[k] = v.get<std::string>();
    return report;
}

std::string report_to_markdown(const ExperimentReport& report) {
    std::string md;
    md += "# Detector evaluation\n\n";
    md += "Test pool: " + std::to_string(report.test_benign) + " benign / " +
          std::to_string(report.test_malicious) + " malicious windows.\n\n";
    md += "| detector | strategy | recall | precision | F1 | train benign | train malicious |\n";
    md += "|---|---|---|---|---|---|---|\n";
    for (const auto& cell : report.cells) {
        md += "| " + cell.detector + " | " + to_string(cell.strategy) + " | " +
              format_metric(cell.m.recall) + " | " + format_metric(cell.m.precision) +
              " | " + format_metric(cell.m.f1) + " | " + std::to_string(cell.train_benign) +
              " | " + std::to_string(cell.train_malicious) + " |\n";
    }
    md += "\n";
    for (const auto& cell : report.cells) {
        if (cell.run_metrics.size() <= 1) continue;
        md += "## " + cell.detector + " / " + to_string(cell.strategy) + " runs\n\n";
        md += "| run | recall | precision | F1 | cohort |\n|---|---|---|---|---|\n";
        for (std::size_t r = 0; r < cell.run_metrics.size(); ++r) {
            std::string cohort;
            for (const auto& id : cell.cohorts[r]) cohort += id + " ";
            md += "| " + std::to_string(r) + " | " + format_metric(cell.run_metrics[r].recall) +
                  " | " + format_metric(cell.run_metrics[r].precision) + " | " +
                  format_metric(cell.run_metrics[r].f1) + " | " + cohort + "|\n";
        }
        md += "\n";
    }
    if (!report.provenance.empty()) {
        md += "## Provenance\n\n";
        for (const auto& [k, v] : report.provenance) md += "- " + k + ": `" + v + "`\n";
    }
    return md;
}

std::vector<std::string> emit_plot_data(const PlotData& data, const std::string& dir) {
    if (data.report == nullptr) throw std::invalid_argument("emit_plot_data: no report");
    fs::create_directories(dir);
    std::vector<std::string> written;

    const std::array<std::pair<const char*, std::optional<double> MetricSet::*>, 3> kinds = {
        {{"recall", &MetricSet::recall},
         {"precision", &MetricSet::precision},
         {"f1", &MetricSet::f1}}};
    for (const auto& [name, member] : kinds) {
        const std::string path = (fs::path(dir) / (std::string(name) + ".csv")).string();
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write plot file: " + path);
        out << "detector,strategy,run,value\n";
        for (const auto& cell : data.report->cells) {
            out << cell.detector << ',' << to_string(cell.strategy) << ",,"
                << format_metric(cell.m.*member) << '\n';
            if (cell.run_metrics.size() > 1)
                for (std::size_t r = 0; r < cell.run_metrics.size(); ++r)
                    out << cell.detector << ',' << to_string(cell.strategy) << ',' << r << ','
                        << format_metric(cell.run_metrics[r].*member) << '\n';
        }
        written.push_back(path);
    }

    {
        const std::string path = (fs::path(dir) / "ratios.csv").string();
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write plot file: " + path);
        out << "patient_id,normal,abnormal,ratio\n";
        for (const auto& [id, ratio] : data.ratios) {
            out << id << ',' << ratio.normal << ',' << ratio.abnormal << ',';
            if (ratio.unbounded) {
                out << "unbounded";
            } else {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.4f", ratio.value);
                out << buf;
            }
            out << '\n';
        }
        written.push_back(path);
    }

    for (const auto& [patient, rows] : data.overlays) {
        const std::string path = (fs::path(dir) / ("overlay_" + patient + ".csv")).string();
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write plot file: " + path);
        out << "timestamp,cgm,verdict,truth\n";
        for (const auto& row : rows)
            out << row[0] << ',' << row[1] << ',' << row[2] << ',' << row[3] << '\n';
        written.push_back(path);
    }
    return written;
}

}  // namespace riskprof
