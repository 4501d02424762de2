#include "riskprof/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "riskprof/sha256.hpp"

namespace riskprof {

namespace {

using json = nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!known.count(key))
            throw std::invalid_argument("config: unknown key '" + where + key + "'");
}

template <typename T>
T take(const json& obj, const std::string& key, T fallback, Config& cfg,
       const std::string& where) {
    if (obj.contains(key)) return obj.at(key).get<T>();
    cfg.defaults_applied.push_back(where + key);
    return fallback;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument("config: " + message);
}

}  // namespace

Config validate_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: parse error: ") + e.what());
    }
    if (!doc.is_object()) throw std::invalid_argument("config: top level must be an object");

    Config cfg;
    reject_unknown_keys(doc, {"seed", "out_dir", "data", "thresholds", "windows", "forecaster",
                              "attack", "severity", "cluster", "detect", "evaluate"},
                        "");

    cfg.seed = take<std::uint64_t>(doc, "seed", 42, cfg, "");
    cfg.out_dir = take<std::string>(doc, "out_dir", "runs", cfg, "");

    {
        json sub = doc.value("data", json::object());
        if (!doc.contains("data")) cfg.defaults_applied.push_back("data");
        reject_unknown_keys(sub, {"source", "manifest", "synthetic"}, "data.");
        cfg.data.source = take<std::string>(sub, "source", "synthetic", cfg, "data.");
        require(cfg.data.source == "synthetic" || cfg.data.source == "manifest",
                "data.source must be 'synthetic' or 'manifest'");
        cfg.data.manifest_path = take<std::string>(sub, "manifest", "", cfg, "data.");
        require(cfg.data.source != "manifest" || !cfg.data.manifest_path.empty(),
                "data.manifest is required when data.source is 'manifest'");

        json synth = sub.value("synthetic", json::object());
        if (!sub.contains("synthetic")) cfg.defaults_applied.push_back("data.synthetic");
        reject_unknown_keys(synth,
                            {"n_patients", "trace_len", "test_fraction", "cadence", "baseline",
                             "noise_scale", "meal_interval_hours", "meal_jitter_minutes",
                             "patients"},
                            "data.synthetic.");
        auto& s = cfg.data.synthetic;
        s.n_patients = take<std::size_t>(synth, "n_patients", 12, cfg, "data.synthetic.");
        s.trace_len = take<std::size_t>(synth, "trace_len", 1600, cfg, "data.synthetic.");
        s.test_fraction =
            take<double>(synth, "test_fraction", 0.3, cfg, "data.synthetic.");
        s.cadence = take<std::int64_t>(synth, "cadence", 300, cfg, "data.synthetic.");
        s.baseline = take<double>(synth, "baseline", 110.0, cfg, "data.synthetic.");
        s.noise_scale = take<double>(synth, "noise_scale", 4.0, cfg, "data.synthetic.");
        s.meal_interval_hours =
            take<double>(synth, "meal_interval_hours", 5.0, cfg, "data.synthetic.");
        s.meal_jitter_minutes =
            take<double>(synth, "meal_jitter_minutes", 25.0, cfg, "data.synthetic.");
        require(s.test_fraction > 0.0 && s.test_fraction < 1.0,
                "data.synthetic.test_fraction must lie in (0,1)");
        require(s.cadence > 0, "data.synthetic.cadence must be positive");
        if (synth.contains("patients")) {
            for (const auto& p : synth.at("patients")) {
                reject_unknown_keys(
                    p, {"id", "normal_fraction", "hyper_ceiling", "hypo_share"},
                    "data.synthetic.patients[].");
                SyntheticPatientParams params;
                params.patient_id = p.value("id", "");
                params.normal_fraction = p.value("normal_fraction", 0.8);
                params.hyper_ceiling = p.value("hyper_ceiling", 300.0);
                params.hypo_share = p.value("hypo_share", 0.2);
                require(params.normal_fraction > 0.0 && params.normal_fraction < 1.0,
                        "data.synthetic.patients[].normal_fraction must lie in (0,1)");
                require(params.hypo_share >= 0.0 && params.hypo_share <= 1.0,
                        "data.synthetic.patients[].hypo_share must lie in [0,1]");
                s.patients.push_back(std::move(params));
            }
            require(s.patients.size() == s.n_patients,
                    "data.synthetic.patients must have n_patients entries");
        } else {
            cfg.defaults_applied.push_back("data.synthetic.patients");
        }
    }

    {
        json sub = doc.value("thresholds", json::object());
        if (!doc.contains("thresholds")) cfg.defaults_applied.push_back("thresholds");
        reject_unknown_keys(
            sub, {"hypo", "hyper_fasting", "hyper_postprandial", "postprandial_window_s"},
            "thresholds.");
        cfg.thresholds.hypo = take<double>(sub, "hypo", 70.0, cfg, "thresholds.");
        cfg.thresholds.hyper_fasting =
            take<double>(sub, "hyper_fasting", 125.0, cfg, "thresholds.");
        cfg.thresholds.hyper_postprandial =
            take<double>(sub, "hyper_postprandial", 180.0, cfg, "thresholds.");
        cfg.thresholds.postprandial_window =
            take<std::int64_t>(sub, "postprandial_window_s", 7200, cfg, "thresholds.");
        require(cfg.thresholds.hypo > 0.0, "thresholds.hypo must be positive");
        require(cfg.thresholds.hypo < cfg.thresholds.hyper_fasting,
                "thresholds.hypo must be below thresholds.hyper_fasting");
        require(cfg.thresholds.hyper_fasting <= cfg.thresholds.hyper_postprandial,
                "thresholds.hyper_fasting must not exceed thresholds.hyper_postprandial");
        require(cfg.thresholds.postprandial_window > 0,
                "thresholds.postprandial_window_s must be positive");
        cfg.data.synthetic.thresholds = cfg.thresholds;
    }

    {
        json sub = doc.value("windows", json::object());
        if (!doc.contains("windows")) cfg.defaults_applied.push_back("windows");
        reject_unknown_keys(sub, {"history_len", "horizon"}, "windows.");
        cfg.windows.history_len = take<std::size_t>(sub, "history_len", 12, cfg, "windows.");
        cfg.windows.horizon = take<std::size_t>(sub, "horizon", 6, cfg, "windows.");
        require(cfg.windows.history_len >= 1, "windows.history_len must be >= 1");
        require(cfg.windows.horizon >= 1, "windows.horizon must be >= 1");
    }

    {
        json sub = doc.value("forecaster", json::object());
        if (!doc.contains("forecaster")) cfg.defaults_applied.push_back("forecaster");
        reject_unknown_keys(sub,
                            {"hidden_width", "learning_rate", "max_epochs", "plateau_epochs",
                             "plateau_tol", "weight_decay"},
                            "forecaster.");
        cfg.forecaster.hidden_width =
            take<std::size_t>(sub, "hidden_width", 32, cfg, "forecaster.");
        cfg.forecaster.learning_rate =
            take<double>(sub, "learning_rate", 0.05, cfg, "forecaster.");
        cfg.forecaster.max_epochs =
            take<std::size_t>(sub, "max_epochs", 2000, cfg, "forecaster.");
        cfg.forecaster.plateau_epochs =
            take<std::size_t>(sub, "plateau_epochs", 50, cfg, "forecaster.");
        cfg.forecaster.plateau_tol =
            take<double>(sub, "plateau_tol", 1e-6, cfg, "forecaster.");
        cfg.forecaster.weight_decay =
            take<double>(sub, "weight_decay", 0.0, cfg, "forecaster.");
        require(cfg.forecaster.weight_decay >= 0.0, "forecaster.weight_decay must be >= 0");
        require(cfg.forecaster.learning_rate > 0.0, "forecaster.learning_rate must be positive");
        require(cfg.forecaster.max_epochs >= 1, "forecaster.max_epochs must be >= 1");
        require(cfg.forecaster.plateau_epochs >= 1, "forecaster.plateau_epochs must be >= 1");
        require(cfg.forecaster.plateau_tol >= 0.0, "forecaster.plateau_tol must be >= 0");
    }

    {
        json sub = doc.value("attack", json::object());
        if (!doc.contains("attack")) cfg.defaults_applied.push_back("attack");
        reject_unknown_keys(sub, {"step", "max_iters", "cgm_max", "profiling_model"},
                            "attack.");
        cfg.attack.step = take<double>(sub, "step", 5.0, cfg, "attack.");
        cfg.attack.max_iters = take<std::size_t>(sub, "max_iters", 200, cfg, "attack.");
        cfg.attack.cgm_max = take<double>(sub, "cgm_max", kCgmMax, cfg, "attack.");
        cfg.attack.profiling_model =
            take<std::string>(sub, "profiling_model", "personalized", cfg, "attack.");
        require(cfg.attack.step > 0.0, "attack.step must be positive");
        require(cfg.attack.max_iters >= 1, "attack.max_iters must be >= 1");
        require(cfg.attack.cgm_max > cfg.thresholds.hyper_postprandial,
                "attack.cgm_max must exceed the postprandial hyper threshold");
        require(cfg.attack.profiling_model == "personalized" ||
                    cfg.attack.profiling_model == "aggregate",
                "attack.profiling_model must be 'personalized' or 'aggregate'");
    }

    {
        json sub = doc.value("severity", json::object());
        if (!doc.contains("severity")) cfg.defaults_applied.push_back("severity");
        reject_unknown_keys(sub,
                            {"hypo_to_hyper", "normal_to_hyper", "hypo_to_normal",
                             "hyper_to_hypo", "hyper_to_normal", "normal_to_hypo",
                             "same_state"},
                            "severity.");
        cfg.severity_same_state = take<double>(sub, "same_state", 1.0, cfg, "severity.");
        cfg.severity = SeverityTable::defaults(cfg.severity_same_state);
        const auto hypo = static_cast<int>(DiagnosticState::Hypo);
        const auto normal = static_cast<int>(DiagnosticState::Normal);
        const auto hyper = static_cast<int>(DiagnosticState::Hyper);
        cfg.severity.coef[hypo][hyper] =
            take<double>(sub, "hypo_to_hyper", 64.0, cfg, "severity.");
        cfg.severity.coef[normal][hyper] =
            take<double>(sub, "normal_to_hyper", 32.0, cfg, "severity.");
        cfg.severity.coef[hypo][normal] =
            take<double>(sub, "hypo_to_normal", 16.0, cfg, "severity.");
        cfg.severity.coef[hyper][hypo] =
            take<double>(sub, "hyper_to_hypo", 8.0, cfg, "severity.");
        cfg.severity.coef[hyper][normal] =
            take<double>(sub, "hyper_to_normal", 4.0, cfg, "severity.");
        cfg.severity.coef[normal][hypo] =
            take<double>(sub, "normal_to_hypo", 2.0, cfg, "severity.");
        try {
            cfg.severity.validate();
        } catch (const std::exception& e) {
            throw std::invalid_argument(std::string("config: severity: ") + e.what());
        }
    }

    {
        json sub = doc.value("cluster", json::object());
        if (!doc.contains("cluster")) cfg.defaults_applied.push_back("cluster");
        reject_unknown_keys(sub, {"linkage", "standardize"}, "cluster.");
        cfg.cluster.linkage = linkage_from_string(
            take<std::string>(sub, "linkage", "complete", cfg, "cluster."));
        cfg.cluster.standardize = take<bool>(sub, "standardize", true, cfg, "cluster.");
    }

    {
        json sub = doc.value("detect", json::object());
        if (!doc.contains("detect")) cfg.defaults_applied.push_back("detect");
        reject_unknown_keys(sub, {"knn", "ocsvm", "max_train_benign", "max_train_malicious"},
                            "detect.");
        json knn = sub.value("knn", json::object());
        if (!sub.contains("knn")) cfg.defaults_applied.push_back("detect.knn");
        reject_unknown_keys(knn, {"k", "p"}, "detect.knn.");
        cfg.detect.knn.k = take<std::size_t>(knn, "k", 7, cfg, "detect.knn.");
        cfg.detect.knn.minkowski_p = take<double>(knn, "p", 2.0, cfg, "detect.knn.");
        require(cfg.detect.knn.k >= 1, "detect.knn.k must be >= 1");
        require(cfg.detect.knn.minkowski_p >= 1.0, "detect.knn.p must be >= 1");

        json ocsvm = sub.value("ocsvm", json::object());
        if (!sub.contains("ocsvm")) cfg.defaults_applied.push_back("detect.ocsvm");
        reject_unknown_keys(ocsvm, {"gamma", "coef0", "nu", "tol", "max_iter"},
                            "detect.ocsvm.");
        if (ocsvm.contains("gamma") && ocsvm.at("gamma").is_string()) {
            require(ocsvm.at("gamma").get<std::string>() == "auto",
                    "detect.ocsvm.gamma must be a number or 'auto'");
            cfg.detect.ocsvm.gamma = -1.0;
        } else {
            cfg.detect.ocsvm.gamma = take<double>(ocsvm, "gamma", -1.0, cfg, "detect.ocsvm.");
        }
        cfg.detect.ocsvm.coef0 = take<double>(ocsvm, "coef0", 10.0, cfg, "detect.ocsvm.");
        cfg.detect.ocsvm.nu = take<double>(ocsvm, "nu", 0.5, cfg, "detect.ocsvm.");
        cfg.detect.ocsvm.tol = take<double>(ocsvm, "tol", 1e-3, cfg, "detect.ocsvm.");
        cfg.detect.ocsvm.max_iter =
            take<long long>(ocsvm, "max_iter", -1, cfg, "detect.ocsvm.");
        require(cfg.detect.ocsvm.nu > 0.0 && cfg.detect.ocsvm.nu <= 1.0,
                "detect.ocsvm.nu must lie in (0,1]");
        require(cfg.detect.ocsvm.tol > 0.0, "detect.ocsvm.tol must be positive");

        cfg.detect.max_train_benign =
            take<std::size_t>(sub, "max_train_benign", 1200, cfg, "detect.");
        cfg.detect.max_train_malicious =
            take<std::size_t>(sub, "max_train_malicious", 1200, cfg, "detect.");
        require(cfg.detect.max_train_benign >= 2, "detect.max_train_benign must be >= 2");
        require(cfg.detect.max_train_malicious >= 1,
                "detect.max_train_malicious must be >= 1");
    }

    {
        json sub = doc.value("evaluate", json::object());
        if (!doc.contains("evaluate")) cfg.defaults_applied.push_back("evaluate");
        reject_unknown_keys(sub,
                            {"strategies", "random_runs", "random_cohort_size",
                             "overlay_detector", "overlay_strategy"},
                            "evaluate.");
        if (sub.contains("strategies")) {
            cfg.evaluate.strategies.clear();
            for (const auto& s : sub.at("strategies"))
                cfg.evaluate.strategies.push_back(strategy_from_string(s.get<std::string>()));
            require(!cfg.evaluate.strategies.empty(),
                    "evaluate.strategies must not be empty");
        } else {
            cfg.defaults_applied.push_back("evaluate.strategies");
        }
        cfg.evaluate.random_runs = take<std::size_t>(sub, "random_runs", 10, cfg, "evaluate.");
        cfg.evaluate.random_cohort_size =
            take<std::size_t>(sub, "random_cohort_size", 3, cfg, "evaluate.");
        cfg.evaluate.overlay_detector =
            take<std::string>(sub, "overlay_detector", "knn", cfg, "evaluate.");
        cfg.evaluate.overlay_strategy = strategy_from_string(
            take<std::string>(sub, "overlay_strategy", "all_patients", cfg, "evaluate."));
        require(cfg.evaluate.random_runs >= 1, "evaluate.random_runs must be >= 1");
        require(cfg.evaluate.random_cohort_size >= 1,
                "evaluate.random_cohort_size must be >= 1");
        require(cfg.evaluate.overlay_detector == "knn" ||
                    cfg.evaluate.overlay_detector == "ocsvm",
                "evaluate.overlay_detector must be 'knn' or 'ocsvm'");
    }

    cfg.data.synthetic.seed = cfg.seed;
    return cfg;
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return validate_config(text);
}

std::string config_to_canonical_json(const Config& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["data"]["source"] = cfg.data.source;
    j["data"]["manifest"] = cfg.data.manifest_path;
    const auto& s = cfg.data.synthetic;
    j["data"]["synthetic"] = {{"n_patients", s.n_patients},
                              {"trace_len", s.trace_len},
                              {"test_fraction", s.test_fraction},
                              {"cadence", s.cadence},
                              {"baseline", s.baseline},
                              {"noise_scale", s.noise_scale},
                              {"meal_interval_hours", s.meal_interval_hours},
                              {"meal_jitter_minutes", s.meal_jitter_minutes}};
    auto patients = nlohmann::ordered_json::array();
    for (const auto& p : s.patients)
        patients.push_back({{"id", p.patient_id},
                            {"normal_fraction", p.normal_fraction},
                            {"hyper_ceiling", p.hyper_ceiling},
                            {"hypo_share", p.hypo_share}});
    j["data"]["synthetic"]["patients"] = patients;
    j["thresholds"] = {{"hypo", cfg.thresholds.hypo},
                       {"hyper_fasting", cfg.thresholds.hyper_fasting},
                       {"hyper_postprandial", cfg.thresholds.hyper_postprandial},
                       {"postprandial_window_s", cfg.thresholds.postprandial_window}};
    j["windows"] = {{"history_len", cfg.windows.history_len},
                    {"horizon", cfg.windows.horizon}};
    j["forecaster"] = {{"hidden_width", cfg.forecaster.hidden_width},
                       {"learning_rate", cfg.forecaster.learning_rate},
                       {"max_epochs", cfg.forecaster.max_epochs},
                       {"plateau_epochs", cfg.forecaster.plateau_epochs},
                       {"plateau_tol", cfg.forecaster.plateau_tol},
                       {"weight_decay", cfg.forecaster.weight_decay}};
    j["attack"] = {{"step", cfg.attack.step},
                   {"max_iters", cfg.attack.max_iters},
                   {"cgm_max", cfg.attack.cgm_max},
                   {"profiling_model", cfg.attack.profiling_model}};
    const auto hypo = static_cast<int>(DiagnosticState::Hypo);
    const auto normal = static_cast<int>(DiagnosticState::Normal);
    const auto hyper = static_cast<int>(DiagnosticState::Hyper);
    j["severity"] = {{"hypo_to_hyper", cfg.severity.coef[hypo][hyper]},
                     {"normal_to_hyper", cfg.severity.coef[normal][hyper]},
                     {"hypo_to_normal", cfg.severity.coef[hypo][normal]},
                     {"hyper_to_hypo", cfg.severity.coef[hyper][hypo]},
                     {"hyper_to_normal", cfg.severity.coef[hyper][normal]},
                     {"normal_to_hypo", cfg.severity.coef[normal][hypo]},
                     {"same_state", cfg.severity_same_state}};
    j["cluster"] = {{"linkage", to_string(cfg.cluster.linkage)},
                    {"standardize", cfg.cluster.standardize}};
    j["detect"] = {{"knn", {{"k", cfg.detect.knn.k}, {"p", cfg.detect.knn.minkowski_p}}},
                   {"ocsvm",
                    {{"gamma", cfg.detect.ocsvm.gamma},
                     {"coef0", cfg.detect.ocsvm.coef0},
                     {"nu", cfg.detect.ocsvm.nu},
                     {"tol", cfg.detect.ocsvm.tol},
                     {"max_iter", cfg.detect.ocsvm.max_iter}}},
                   {"max_train_benign", cfg.detect.max_train_benign},
                   {"max_train_malicious", cfg.detect.max_train_malicious}};
    auto strategies = nlohmann::ordered_json::array();
    for (const auto& s2 : cfg.evaluate.strategies) strategies.push_back(to_string(s2));
    j["evaluate"] = {{"strategies", strategies},
                     {"random_runs", cfg.evaluate.random_runs},
                     {"random_cohort_size", cfg.evaluate.random_cohort_size},
                     {"overlay_detector", cfg.evaluate.overlay_detector},
                     {"overlay_strategy", to_string(cfg.evaluate.overlay_strategy)}};
    return j.dump(2) + "\n";
}

std::string config_hash(const Config& cfg) {
    return sha256_hex(config_to_canonical_json(cfg));
}

}  // namespace riskprof
