#include "riskprof/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "riskprof/attack.hpp"
#include "riskprof/cluster.hpp"
#include "riskprof/sha256.hpp"

namespace fs = std::filesystem;

namespace riskprof {

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    for (int t = 0; t < jobs; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

std::optional<RunManifest> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
        RunManifest m;
        m.tool_version = doc.at("tool_version").get<std::string>();
        m.config_hash = doc.at("config_hash").get<std::string>();
        if (doc.contains("defaults_applied"))
            m.defaults_applied = doc.at("defaults_applied").get<std::vector<std::string>>();
        for (const auto& [name, rec] : doc.at("stages").items()) {
            StageRecord r;
            for (const auto& [k, v] : rec.at("inputs").items())
                r.inputs[k] = v.get<std::string>();
            for (const auto& [k, v] : rec.at("outputs").items())
                r.outputs[k] = v.get<std::string>();
            m.stages[name] = std::move(r);
        }
        return m;
    } catch (const std::exception& e) {
        std::cerr << "[riskprof] warning: manifest " << path
                  << " is corrupted (" << e.what() << "); treating all stages as stale\n";
        return std::nullopt;
    }
}

void save_manifest(const RunManifest& manifest, const std::string& path) {
    nlohmann::ordered_json doc;
    doc["tool_version"] = manifest.tool_version;
    doc["config_hash"] = manifest.config_hash;
    doc["defaults_applied"] = manifest.defaults_applied;
    doc["stages"] = nlohmann::ordered_json::object();
    for (const auto& [name, rec] : manifest.stages) {
        nlohmann::ordered_json r;
        r["inputs"] = rec.inputs;
        r["outputs"] = rec.outputs;
        doc["stages"][name] = r;
    }
    write_file(path, doc.dump(2) + "\n");
}

bool stage_cache_lookup(const RunManifest& manifest, const std::string& stage,
                        const std::map<std::string, std::string>& input_hashes,
                        const fs::path& run_dir) {
    const auto it = manifest.stages.find(stage);
    if (it == manifest.stages.end()) return false;
    if (it->second.inputs != input_hashes) return false;
    for (const auto& [rel, hash] : it->second.outputs) {
        const fs::path p = run_dir / rel;
        if (!fs::exists(p)) {
            std::cerr << "[riskprof] warning: stage '" << stage << "' output " << rel
                      << " is missing; recomputing\n";
            return false;
        }
        if (sha256_file_hex(p.string()) != hash) {
            std::cerr << "[riskprof] warning: stage '" << stage << "' output " << rel
                      << " changed on disk; recomputing\n";
            return false;
        }
    }
    return true;
}

Pipeline::Pipeline(Config config, const std::string& out_dir_override, int jobs)
    : config_(std::move(config)), jobs_(jobs < 1 ? 1 : jobs) {
    if (!out_dir_override.empty()) config_.out_dir = out_dir_override;
    const std::string hash = config_hash(config_);
    run_dir_ = fs::path(config_.out_dir) / hash.substr(0, 12);
    fs::create_directories(run_dir_);
    write_file(run_dir_ / "config.json", config_to_canonical_json(config_));

    manifest_.config_hash = hash;
    manifest_.defaults_applied = config_.defaults_applied;
    if (auto existing = load_manifest((run_dir_ / "manifest.json").string())) {
        if (existing->config_hash == hash) {
            manifest_.stages = std::move(existing->stages);
        } else {
            std::cerr << "[riskprof] warning: manifest config hash mismatch; starting fresh\n";
        }
    }
}

std::string Pipeline::section_hash(const std::string& name) const {
    const auto canonical = nlohmann::json::parse(config_to_canonical_json(config_));
    if (name == "seed") return sha256_hex(std::to_string(config_.seed));
    return sha256_hex(canonical.at(name).dump());
}

void Pipeline::require_artifacts(const std::string& producer_stage,
                                 const std::vector<std::string>& rel_paths) const {
    for (const auto& rel : rel_paths)
        if (!fs::exists(run_dir_ / rel)) throw MissingArtifactError(producer_stage);
}

bool Pipeline::begin_stage(const std::string& stage,
                           const std::map<std::string, std::string>& inputs) {
    if (stage_cache_lookup(manifest_, stage, inputs, run_dir_)) {
        std::cerr << "[riskprof] " << stage << ": cached\n";
        return false;
    }
    std::cerr << "[riskprof] " << stage << ": running\n";
    return true;
}

void Pipeline::finish_stage(const std::string& stage,
                            const std::map<std::string, std::string>& inputs,
                            const std::vector<std::string>& outputs) {
    StageRecord rec;
    rec.inputs = inputs;
    for (const auto& rel : outputs)
        rec.outputs[rel] = sha256_file_hex((run_dir_ / rel).string());
    manifest_.stages[stage] = std::move(rec);
    save_manifest(manifest_, (run_dir_ / "manifest.json").string());
}

std::vector<PatientTrace> Pipeline::load_cohort() const {
    const fs::path manifest = run_dir_ / "traces" / "cohort.json";
    if (!fs::exists(manifest)) throw MissingArtifactError("synth");
    return load_traces(manifest.string(), TraceFormat::Manifest);
}

void Pipeline::run_synth() {
    std::map<std::string, std::string> inputs = {
        {"config.data", section_hash("data")},
        {"config.thresholds", section_hash("thresholds")},
        {"config.seed", section_hash("seed")},
    };
    if (config_.data.source == "manifest")
        inputs["source_manifest"] = sha256_file_hex(config_.data.manifest_path);
    if (!begin_stage("synth", inputs)) return;

    std::vector<PatientTrace> traces;
    if (config_.data.source == "synthetic") {
        traces = generate_synthetic_cohort(config_.data.synthetic);
    } else {
        traces = load_traces(config_.data.manifest_path, TraceFormat::Manifest);
    }
    write_cohort(traces, (run_dir_ / "traces").string());
    std::vector<std::string> outputs = {"traces/cohort.json"};
    for (const auto& t : traces)
        outputs.push_back("traces/" + t.patient_id + "_" + to_string(t.split) + ".csv");
    finish_stage("synth", inputs, outputs);
}

namespace {

std::map<std::string, std::string> hash_files(const fs::path& run_dir,
                                              const std::vector<std::string>& rels) {
    std::map<std::string, std::string> out;
    for (const auto& rel : rels) out[rel] = sha256_file_hex((run_dir / rel).string());
    return out;
}

}  // namespace

void Pipeline::run_fit_predictor() {
    require_artifacts("synth", {"traces/cohort.json"});
    const auto traces = load_cohort();
    const auto ids = sorted_patient_ids(traces);

    std::vector<std::string> trace_files = {"traces/cohort.json"};
    for (const auto& t : traces)
        trace_files.push_back("traces/" + t.patient_id + "_" + to_string(t.split) + ".csv");
    auto inputs = hash_files(run_dir_, trace_files);
    inputs["config.windows"] = section_hash("windows");
    inputs["config.forecaster"] = section_hash("forecaster");
    inputs["config.seed"] = section_hash("seed");
    inputs["profiling_model"] = sha256_hex(config_.attack.profiling_model);
    if (!begin_stage("fit-predictor", inputs)) return;

    fs::create_directories(run_dir_ / "models");
    std::vector<std::string> outputs;

    std::vector<PatientTrace> train_traces;
    for (const auto& t : traces)
        if (t.split == Split::Train) train_traces.push_back(t);

    TrainConfig base = config_.forecaster;
    base.seed = derive_seed(config_.seed, "fit:aggregate");
    const auto aggregate =
        fit_forecaster(train_traces, ForecastMode::Aggregate, config_.windows.history_len,
                       config_.windows.horizon, base);
    save_forecast_model(aggregate, (run_dir_ / "models" / "aggregate.json").string());
    outputs.push_back("models/aggregate.json");

    if (config_.attack.profiling_model == "personalized") {
        std::vector<std::string> files(ids.size());
        parallel_for(ids.size(), jobs_, [&](std::size_t i) {
            const auto& id = ids[i];
            std::vector<PatientTrace> own;
            for (const auto& t : train_traces)
                if (t.patient_id == id) own.push_back(t);
            TrainConfig cfg = config_.forecaster;
            cfg.seed = derive_seed(config_.seed, "fit:" + id);
            const auto model = fit_forecaster(own, ForecastMode::Personalized,
                                              config_.windows.history_len,
                                              config_.windows.horizon, cfg);
            const std::string rel = "models/personalized_" + id + ".json";
            save_forecast_model(model, (run_dir_ / rel).string());
            files[i] = rel;
        });
        outputs.insert(outputs.end(), files.begin(), files.end());
    }
    finish_stage("fit-predictor", inputs, outputs);
}

void Pipeline::run_attack() {
    require_artifacts("synth", {"traces/cohort.json"});
    require_artifacts("fit-predictor", {"models/aggregate.json"});
    const auto traces = load_cohort();
    const auto ids = sorted_patient_ids(traces);

    std::vector<std::string> model_files = {"models/aggregate.json"};
    if (config_.attack.profiling_model == "personalized")
        for (const auto& id : ids) model_files.push_back("models/personalized_" + id + ".json");
    require_artifacts("fit-predictor", model_files);

    auto inputs = hash_files(run_dir_, model_files);
    inputs["traces/cohort.json"] = sha256_file_hex((run_dir_ / "traces/cohort.json").string());
    inputs["config.attack"] = section_hash("attack");
    inputs["config.windows"] = section_hash("windows");
    inputs["config.thresholds"] = section_hash("thresholds");
    if (!begin_stage("attack", inputs)) return;

    fs::create_directories(run_dir_ / "attacks");
    const auto aggregate =
        load_forecast_model((run_dir_ / "models" / "aggregate.json").string());

    std::vector<std::vector<AttackOutcome>> profiling(ids.size());
    std::vector<std::string> outputs;
    parallel_for(ids.size(), jobs_, [&](std::size_t i) {
        const auto& id = ids[i];
        const auto* train = find_trace(traces, id, Split::Train);
        const auto* test = find_trace(traces, id, Split::Test);
        if (train == nullptr || test == nullptr)
            throw std::runtime_error("attack: missing train/test trace for '" + id + "'");

        ForecastModel profiling_model = aggregate;
        if (config_.attack.profiling_model == "personalized")
            profiling_model = load_forecast_model(
                (run_dir_ / ("models/personalized_" + id + ".json")).string());

        profiling[i] = attack_trace(profiling_model, *test, config_.windows.history_len,
                                    config_.windows.horizon, config_.attack.step,
                                    config_.attack.max_iters, config_.thresholds,
                                    config_.attack.cgm_max);
        save_outcomes_jsonl(profiling[i],
                            (run_dir_ / ("attacks/profiling_" + id + ".jsonl")).string());

        const auto det_train = attack_trace(
            aggregate, *train, config_.windows.history_len, config_.windows.horizon,
            config_.attack.step, config_.attack.max_iters, config_.thresholds,
            config_.attack.cgm_max);
        save_outcomes_jsonl(det_train,
                            (run_dir_ / ("attacks/detector_train_" + id + ".jsonl")).string());

        const auto det_test = attack_trace(
            aggregate, *test, config_.windows.history_len, config_.windows.horizon,
            config_.attack.step, config_.attack.max_iters, config_.thresholds,
            config_.attack.cgm_max);
        save_outcomes_jsonl(det_test,
                            (run_dir_ / ("attacks/detector_test_" + id + ".jsonl")).string());
    });

    std::vector<AttackOutcome> all_profiling;
    for (auto& v : profiling)
        all_profiling.insert(all_profiling.end(), v.begin(), v.end());
    write_success_rate_csv(aggregate_success_rates(all_profiling),
                           (run_dir_ / "attacks" / "success_rates.csv").string());

    for (const auto& id : ids) {
        outputs.push_back("attacks/profiling_" + id + ".jsonl");
        outputs.push_back("attacks/detector_train_" + id + ".jsonl");
        outputs.push_back("attacks/detector_test_" + id + ".jsonl");
    }
    outputs.push_back("attacks/success_rates.csv");
    finish_stage("attack", inputs, outputs);
}

void Pipeline::run_risk() {
    require_artifacts("synth", {"traces/cohort.json"});
    const auto traces = load_cohort();
    const auto ids = sorted_patient_ids(traces);

    std::vector<std::string> attack_files;
    for (const auto& id : ids) attack_files.push_back("attacks/profiling_" + id + ".jsonl");
    require_artifacts("attack", attack_files);

    auto inputs = hash_files(run_dir_, attack_files);
    inputs["config.severity"] = section_hash("severity");
    inputs["config.thresholds"] = section_hash("thresholds");
    if (!begin_stage("risk", inputs)) return;

    fs::create_directories(run_dir_ / "risk");
    std::vector<std::string> outputs;
    for (const auto& id : ids) {
        const auto* test = find_trace(traces, id, Split::Test);
        const auto outcomes =
            load_outcomes_jsonl((run_dir_ / ("attacks/profiling_" + id + ".jsonl")).string());
        const auto profile =
            build_risk_profile(*test, outcomes, config_.severity, config_.thresholds);
        const std::string rel = "risk/" + id + ".csv";
        write_risk_profile_csv(profile, (run_dir_ / rel).string());
        outputs.push_back(rel);
    }
    finish_stage("risk", inputs, outputs);
}

void Pipeline::run_cluster() {
    require_artifacts("synth", {"traces/cohort.json"});
    const auto traces = load_cohort();
    const auto ids = sorted_patient_ids(traces);

    std::vector<std::string> risk_files;
    for (const auto& id : ids) risk_files.push_back("risk/" + id + ".csv");
    require_artifacts("risk", risk_files);
    require_artifacts("attack", {"attacks/success_rates.csv"});

    auto inputs = hash_files(run_dir_, risk_files);
    inputs["attacks/success_rates.csv"] =
        sha256_file_hex((run_dir_ / "attacks/success_rates.csv").string());
    inputs["config.cluster"] = section_hash("cluster");
    if (!begin_stage("cluster", inputs)) return;

    std::vector<RiskProfile> profiles;
    for (const auto& id : ids)
        profiles.push_back(load_risk_profile_csv((run_dir_ / ("risk/" + id + ".csv")).string(), id));

    const auto dendrogram = agglomerate(profiles, config_.cluster.linkage,
                                        config_.cluster.standardize);
    auto partition = cut_by_max_gap(dendrogram);
    bool forced_binary = false;
    if (partition.size() != 2) {
        // Labeling needs a binary split; fall back to cutting the final merge.
        forced_binary = true;
        Dendrogram top = dendrogram;
        std::vector<Dendrogram::Merge> kept(top.merges.begin(), top.merges.end() - 1);
        // Components after applying all merges but the last.
        std::vector<std::size_t> parent(2 * top.leaves.size() - 1);
        for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
        std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (std::size_t i = 0; i < kept.size(); ++i) {
            const std::size_t node = top.leaves.size() + i;
            parent[find(kept[i].left)] = node;
            parent[find(kept[i].right)] = node;
        }
        std::map<std::size_t, std::vector<std::string>> groups;
        for (std::size_t leaf = 0; leaf < top.leaves.size(); ++leaf)
            groups[find(leaf)].push_back(top.leaves[leaf]);
        partition.clear();
        for (auto& [root, members] : groups) {
            std::sort(members.begin(), members.end());
            partition.push_back(std::move(members));
        }
        std::sort(partition.begin(), partition.end(),
                  [](const auto& a, const auto& b) { return a.front() < b.front(); });
    }

    std::map<std::string, double> rates;
    for (const auto& r :
         load_success_rate_csv((run_dir_ / "attacks/success_rates.csv").string()))
        if (!r.overall.empty()) rates[r.patient_id] = r.overall.percent();
    const auto clusters = label_clusters(partition, rates);

    fs::create_directories(run_dir_ / "cluster");
    write_file(run_dir_ / "cluster" / "dendrogram.json", dendrogram_to_json(dendrogram));
    write_file(run_dir_ / "cluster" / "dendrogram.newick",
               dendrogram_to_newick(dendrogram) + "\n");
    auto clusters_json = nlohmann::ordered_json::parse(clusters_to_json(clusters, partition));
    clusters_json["forced_binary"] = forced_binary;
    write_file(run_dir_ / "cluster" / "clusters.json", clusters_json.dump(2) + "\n");
    finish_stage("cluster", inputs,
                 {"cluster/dendrogram.json", "cluster/dendrogram.newick",
                  "cluster/clusters.json"});
}

namespace {

// Round-robin across per-patient groups until the cap, preserving group order.
std::vector<std::vector<double>> cap_stratified(
    const std::vector<std::vector<std::vector<double>>>& groups, std::size_t cap) {
    std::vector<std::vector<double>> out;
    std::size_t total = 0;
    for (const auto& g : groups) total += g.size();
    const std::size_t want = std::min(cap, total);
    out.reserve(want);
    std::size_t rank = 0;
    while (out.size() < want) {
        for (const auto& g : groups) {
            if (rank < g.size() && out.size() < want) out.push_back(g[rank]);
        }
        ++rank;
    }
    return out;
}

struct PatientArtifacts {
    std::vector<FeatureWindow> train_windows;
    std::vector<AttackOutcome> train_outcomes;
    std::vector<FeatureWindow> test_windows;
    std::vector<AttackOutcome> test_outcomes;
};

struct TestPool {
    std::vector<TestSample> samples;
    // per patient: window list with either a benign pool index and optionally
    // a malicious pool index for the adversarial variant
    struct WindowRef {
        std::int64_t timestamp = 0;
        std::size_t benign_index = 0;
        long malicious_index = -1;
        double benign_cgm = 0.0;
        double malicious_cgm = 0.0;
    };
    std::map<std::string, std::vector<WindowRef>> windows;
};

PatientArtifacts load_patient_artifacts(const fs::path& run_dir,
                                        const std::vector<PatientTrace>& traces,
                                        const std::string& id, const WindowConfig& wc) {
    PatientArtifacts a;
    const auto* train = find_trace(traces, id, Split::Train);
    const auto* test = find_trace(traces, id, Split::Test);
    if (train == nullptr || test == nullptr)
        throw std::runtime_error("missing train/test trace for '" + id + "'");
    a.train_windows = windowize(*train, wc.history_len, wc.horizon);
    a.test_windows = windowize(*test, wc.history_len, wc.horizon);
    a.train_outcomes = load_outcomes_jsonl(
        (run_dir / ("attacks/detector_train_" + id + ".jsonl")).string());
    a.test_outcomes = load_outcomes_jsonl(
        (run_dir / ("attacks/detector_test_" + id + ".jsonl")).string());
    if (a.train_outcomes.size() != a.train_windows.size() ||
        a.test_outcomes.size() != a.test_windows.size())
        throw std::runtime_error("attack outcomes for '" + id +
                                 "' do not align with the trace windows");
    return a;
}

TestPool build_test_pool(const fs::path& run_dir, const std::vector<PatientTrace>& traces,
                         const std::vector<std::string>& ids, const WindowConfig& wc) {
    TestPool pool;
    for (const auto& id : ids) {
        const auto a = load_patient_artifacts(run_dir, traces, id, wc);
        auto& refs = pool.windows[id];
        for (std::size_t i = 0; i < a.test_windows.size(); ++i) {
            const auto& w = a.test_windows[i];
            TestPool::WindowRef ref;
            ref.timestamp = w.target_timestamp;
            ref.benign_index = pool.samples.size();
            ref.benign_cgm = w.cgm(w.history_len - 1);
            TestSample benign;
            benign.patient_id = id;
            benign.target_timestamp = w.target_timestamp;
            benign.truth = VerdictLabel::Benign;
            benign.features = w.values;
            benign.display_cgm = ref.benign_cgm;
            pool.samples.push_back(std::move(benign));
            refs.push_back(ref);
        }
        for (std::size_t i = 0; i < a.test_windows.size(); ++i) {
            const auto& o = a.test_outcomes[i];
            if (!o.success()) continue;
            const auto adv = apply_adversarial_cgm(a.test_windows[i], o);
            auto& ref = refs[i];
            ref.malicious_index = static_cast<long>(pool.samples.size());
            ref.malicious_cgm = adv.cgm(adv.history_len - 1);
            TestSample malicious;
            malicious.patient_id = id;
            malicious.target_timestamp = adv.target_timestamp;
            malicious.truth = VerdictLabel::Malicious;
            malicious.features = adv.values;
            malicious.display_cgm = ref.malicious_cgm;
            pool.samples.push_back(std::move(malicious));
        }
    }
    return pool;
}

}  // namespace

void Pipeline::run_fit_detector() {
    require_artifacts("synth", {"traces/cohort.json"});
    require_artifacts("cluster", {"cluster/clusters.json"});
    const auto traces = load_cohort();
    const auto ids = sorted_patient_ids(traces);

    std::vector<std::string> attack_files;
    for (const auto& id : ids)
        attack_files.push_back("attacks/detector_train_" + id + ".jsonl");
    require_artifacts("attack", attack_files);

    auto inputs = hash_files(run_dir_, attack_files);
    inputs["cluster/clusters.json"] =
        sha256_file_hex((run_dir_ / "cluster/clusters.json").string());
    inputs["traces/cohort.json"] =
        sha256_file_hex((run_dir_ / "traces/cohort.json").string());
    inputs["config.detect"] = section_hash("detect");
    inputs["config.evaluate"] = section_hash("evaluate");
    inputs["config.windows"] = section_hash("windows");
    inputs["config.seed"] = section_hash("seed");
    if (!begin_stage("fit-detector", inputs)) return;

    const auto clusters =
        clusters_from_json(read_file(run_dir_ / "cluster" / "clusters.json"));

    // Per-patient training windows (benign + successful adversarial variants).
    std::map<std::string, std::vector<std::vector<double>>> benign_by_patient;
    std::map<std::string, std::vector<std::vector<double>>> malicious_by_patient;
    for (const auto& id : ids) {
        const auto a = load_patient_artifacts(run_dir_, traces, id, config_.windows);
        auto& benign = benign_by_patient[id];
        for (const auto& w : a.train_windows) benign.push_back(w.values);
        auto& malicious = malicious_by_patient[id];
        for (std::size_t i = 0; i < a.train_windows.size(); ++i)
            if (a.train_outcomes[i].success())
                malicious.push_back(
                    apply_adversarial_cgm(a.train_windows[i], a.train_outcomes[i]).values);
    }

    fs::create_directories(run_dir_ / "detectors");
    nlohmann::ordered_json index;
    index["entries"] = nlohmann::ordered_json::array();
    std::vector<std::string> outputs;

    for (const auto kind : config_.evaluate.strategies) {
        TrainingStrategy strategy;
        strategy.kind = kind;
        strategy.runs = config_.evaluate.random_runs;
        strategy.cohort_size = config_.evaluate.random_cohort_size;
        const auto cohorts = select_training_cohorts(
            strategy, clusters, ids, derive_seed(config_.seed, "random_samples"));
        for (std::size_t run = 0; run < cohorts.size(); ++run) {
            std::vector<std::vector<std::vector<double>>> benign_groups, malicious_groups;
            for (const auto& id : cohorts[run]) {
                benign_groups.push_back(benign_by_patient.at(id));
                malicious_groups.push_back(malicious_by_patient.at(id));
            }
            const auto benign = cap_stratified(benign_groups, config_.detect.max_train_benign);
            const auto malicious =
                cap_stratified(malicious_groups, config_.detect.max_train_malicious);

            const std::string suffix =
                std::string(to_string(kind)) + "_run" + std::to_string(run);
            const auto knn = fit_knn(benign, malicious, config_.detect.knn);
            const std::string knn_rel = "detectors/knn_" + suffix + ".json";
            write_file(run_dir_ / knn_rel, knn_model_to_json(knn));
            outputs.push_back(knn_rel);

            const auto ocsvm = fit_ocsvm(benign, config_.detect.ocsvm);
            const std::string ocsvm_rel = "detectors/ocsvm_" + suffix + ".json";
            write_file(run_dir_ / ocsvm_rel, ocsvm_model_to_json(ocsvm));
            outputs.push_back(ocsvm_rel);

            for (const char* det : {"knn", "ocsvm"}) {
                nlohmann::ordered_json entry;
                entry["detector"] = det;
                entry["strategy"] = to_string(kind);
                entry["run"] = run;
                entry["path"] =
                    std::string("detectors/") + det + "_" + suffix + ".json";
                entry["cohort"] = cohorts[run];
                entry["train_benign"] = benign.size();
                entry["train_malicious"] = malicious.size();
                index["entries"].push_back(entry);
            }
        }
    }
    write_file(run_dir_ / "detectors" / "index.json", index.dump(2) + "\n");
    outputs.push_back("detectors/index.json");
    finish_stage("fit-detector", inputs, outputs);
}

void Pipeline::run_evaluate() {
    require_artifacts("synth", {"traces/cohort.json"});
    require_artifacts("fit-detector", {"detectors/index.json"});
    const auto traces = load_cohort();
    const auto ids = sorted_patient_ids(traces);

    std::vector<std::string> attack_files;
    for (const auto& id : ids)
        attack_files.push_back("attacks/detector_test_" + id + ".jsonl");
    require_artifacts("attack", attack_files);

    const auto index =
        nlohmann::json::parse(read_file(run_dir_ / "detectors" / "index.json"));
    std::vector<std::string> detector_files;
    for (const auto& e : index.at("entries"))
        detector_files.push_back(e.at("path").get<std::string>());
    std::sort(detector_files.begin(), detector_files.end());
    detector_files.erase(std::unique(detector_files.begin(), detector_files.end()),
                         detector_files.end());
    require_artifacts("fit-detector", detector_files);

    auto inputs = hash_files(run_dir_, attack_files);
    auto det_hashes = hash_files(run_dir_, detector_files);
    inputs.insert(det_hashes.begin(), det_hashes.end());
    inputs["detectors/index.json"] =
        sha256_file_hex((run_dir_ / "detectors/index.json").string());
    inputs["traces/cohort.json"] =
        sha256_file_hex((run_dir_ / "traces/cohort.json").string());
    inputs["config.evaluate"] = section_hash("evaluate");
    if (!begin_stage("evaluate", inputs)) return;

    const auto pool = build_test_pool(run_dir_, traces, ids, config_.windows);
    std::vector<VerdictLabel> truths;
    truths.reserve(pool.samples.size());
    for (const auto& s : pool.samples) truths.push_back(s.truth);

    ExperimentReport report;
    for (const auto& s : pool.samples) {
        if (s.truth == VerdictLabel::Malicious)
            ++report.test_malicious;
        else
            ++report.test_benign;
    }

    std::vector<VerdictLabel> overlay_verdicts;
    for (const char* det : {"knn", "ocsvm"}) {
        for (const auto kind : config_.evaluate.strategies) {
            ExperimentCell cell;
            cell.detector = det;
            cell.strategy = kind;
            for (const auto& e : index.at("entries")) {
                if (e.at("detector").get<std::string>() != det) continue;
                if (strategy_from_string(e.at("strategy").get<std::string>()) != kind)
                    continue;
                std::vector<VerdictLabel> verdicts;
                verdicts.reserve(pool.samples.size());
                const auto text = read_file(run_dir_ / e.at("path").get<std::string>());
                if (std::string(det) == "knn") {
                    const auto model = knn_model_from_json(text);
                    for (const auto& s : pool.samples)
                        verdicts.push_back(verdict(model, s.features));
                } else {
                    const auto model = ocsvm_model_from_json(text);
                    for (const auto& s : pool.samples)
                        verdicts.push_back(verdict(model, s.features));
                }
                const auto counts = confusion(verdicts, truths);
                cell.run_counts.push_back(counts);
                cell.run_metrics.push_back(metrics(counts));
                cell.counts.tp += counts.tp;
                cell.counts.fp += counts.fp;
                cell.counts.tn += counts.tn;
                cell.counts.fn += counts.fn;
                cell.train_benign += e.at("train_benign").get<std::size_t>();
                cell.train_malicious += e.at("train_malicious").get<std::size_t>();
                cell.cohorts.push_back(e.at("cohort").get<std::vector<std::string>>());
                if (cell.run_verdicts.empty()) cell.run_verdicts.push_back(verdicts);
            }
            if (cell.run_counts.empty())
                throw std::runtime_error("evaluate: no fitted detectors for " +
                                         std::string(det) + "/" + to_string(kind));
            if (cell.run_metrics.size() == 1) {
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
            std::map<std::string, std::pair<std::vector<VerdictLabel>,
                                            std::vector<VerdictLabel>>>
                by_patient;
            const auto& first = cell.run_verdicts.front();
            for (std::size_t i = 0; i < pool.samples.size(); ++i) {
                auto& [v, t] = by_patient[pool.samples[i].patient_id];
                v.push_back(first[i]);
                t.push_back(truths[i]);
            }
            for (const auto& [pid, vt] : by_patient) {
                PatientMetrics pm;
                pm.patient_id = pid;
                pm.counts = confusion(vt.first, vt.second);
                pm.m = metrics(pm.counts);
                cell.per_patient.push_back(std::move(pm));
            }
            if (cell.detector == config_.evaluate.overlay_detector &&
                cell.strategy == config_.evaluate.overlay_strategy)
                overlay_verdicts = cell.run_verdicts.front();
            cell.run_verdicts.clear();
            report.cells.push_back(std::move(cell));
        }
    }

    report.provenance["config"] = manifest_.config_hash;
    for (const auto& [stage, rec] : manifest_.stages)
        for (const auto& [rel, hash] : rec.outputs) report.provenance[rel] = hash;

    fs::create_directories(run_dir_ / "report");
    write_file(run_dir_ / "report" / "report.json", report_to_json(report));

    // Per-window overlay rows for the configured detector/strategy cell.
    std::string overlay = "patient_id,timestamp,cgm,verdict,truth\n";
    if (!overlay_verdicts.empty()) {
        for (const auto& id : ids) {
            for (const auto& ref : pool.windows.at(id)) {
                const bool attacked = ref.malicious_index >= 0;
                const std::size_t idx =
                    attacked ? static_cast<std::size_t>(ref.malicious_index)
                             : ref.benign_index;
                overlay += id + "," + std::to_string(ref.timestamp) + "," +
                           format_double(attacked ? ref.malicious_cgm : ref.benign_cgm) +
                           "," + to_string(overlay_verdicts[idx]) + "," +
                           (attacked ? "malicious" : "benign") + "\n";
            }
        }
    }
    write_file(run_dir_ / "report" / "overlay_verdicts.csv", overlay);
    finish_stage("evaluate", inputs,
                 {"report/report.json", "report/overlay_verdicts.csv"});
}

void Pipeline::run_report() {
    require_artifacts("synth", {"traces/cohort.json"});
    require_artifacts("evaluate", {"report/report.json", "report/overlay_verdicts.csv"});
    const auto traces = load_cohort();
    const auto ids = sorted_patient_ids(traces);

    std::map<std::string, std::string> inputs;
    inputs["report/report.json"] =
        sha256_file_hex((run_dir_ / "report/report.json").string());
    inputs["report/overlay_verdicts.csv"] =
        sha256_file_hex((run_dir_ / "report/overlay_verdicts.csv").string());
    inputs["traces/cohort.json"] =
        sha256_file_hex((run_dir_ / "traces/cohort.json").string());
    if (!begin_stage("report", inputs)) return;

    const auto report = report_from_json(read_file(run_dir_ / "report" / "report.json"));
    write_file(run_dir_ / "report" / "report.md", report_to_markdown(report));

    PlotData plot;
    plot.report = &report;
    for (const auto& id : ids) {
        const auto* train = find_trace(traces, id, Split::Train);
        const auto* test = find_trace(traces, id, Split::Test);
        PatientTrace combined = *train;
        combined.samples.insert(combined.samples.end(), test->samples.begin(),
                                test->samples.end());
        plot.ratios.emplace_back(id, normal_to_abnormal_ratio(combined, config_.thresholds));
    }

    {
        std::istringstream in(read_file(run_dir_ / "report" / "overlay_verdicts.csv"));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::array<std::string, 5> f;
            for (auto& part : f) std::getline(row, part, ',');
            plot.overlays[f[0]].push_back({f[1], f[2], f[3], f[4]});
        }
    }

    const auto written = emit_plot_data(plot, (run_dir_ / "plots").string());
    std::vector<std::string> outputs = {"report/report.md"};
    for (const auto& p : written)
        outputs.push_back(fs::relative(p, run_dir_).string());
    finish_stage("report", inputs, outputs);
}

void Pipeline::run_all() {
    run_synth();
    run_fit_predictor();
    run_attack();
    run_risk();
    run_cluster();
    run_fit_detector();
    run_evaluate();
    run_report();
}

int cli_main(int argc, char** argv) {
    CLI::App app{"Risk-profiling pipeline: constrained evasion attacks on a glucose "
                 "forecaster, per-victim risk profiles, vulnerability clustering, and "
                 "selectively trained anomaly detectors."};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 1;
    app.add_option("--config", config_path, "Run configuration JSON file")->required();
    app.add_option("--out-dir", out_dir, "Artifact root (overrides config and env)");
    app.add_option("--seed", seed, "Root seed override")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--jobs", jobs, "Worker threads for per-patient stages");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "Generate or ingest the patient cohort"},
        {"fit-predictor", "Fit the aggregate and personalized forecasters"},
        {"attack", "Craft constrained adversarial windows and success rates"},
        {"risk", "Build per-victim risk profiles"},
        {"cluster", "Cluster risk profiles and label vulnerability"},
        {"fit-detector", "Train detectors for every strategy cohort"},
        {"evaluate", "Score detectors on the shared test pool"},
        {"report", "Render the report and plot data"},
        {"run-all", "Run every stage in order"},
    };
    for (const auto& [name, desc] : commands)
        app.add_subcommand(name, desc)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        Config cfg = load_config(config_path);
        if (seed_set) {
            cfg.seed = seed;
            cfg.data.synthetic.seed = seed;
        }
        std::string out = out_dir;
        if (out.empty()) {
            if (const char* env = std::getenv("RISKPROF_OUT_DIR")) out = env;
        }
        Pipeline pipeline(std::move(cfg), out, jobs);

        const std::string command = app.get_subcommands().front()->get_name();
        if (command == "synth") pipeline.run_synth();
        else if (command == "fit-predictor") pipeline.run_fit_predictor();
        else if (command == "attack") pipeline.run_attack();
        else if (command == "risk") pipeline.run_risk();
        else if (command == "cluster") pipeline.run_cluster();
        else if (command == "fit-detector") pipeline.run_fit_detector();
        else if (command == "evaluate") pipeline.run_evaluate();
        else if (command == "report") pipeline.run_report();
        else pipeline.run_all();
        std::cerr << "[riskprof] artifacts: " << pipeline.run_dir().string() << "\n";
        return 0;
    } catch (const MissingArtifactError& e) {
        std::cerr << "[riskprof] error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "[riskprof] error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "[riskprof] error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace riskprof
