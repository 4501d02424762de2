#pragma once
// Stage orchestration: content-addressed run directory, tamper-evident
// manifest with input-hash caching, and the CLI entry point.

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskprof/config.hpp"
#include "riskprof/evaluate.hpp"

namespace riskprof {

inline constexpr const char* kToolVersion = "0.1.0";

class MissingArtifactError : public std::runtime_error {
public:
    explicit MissingArtifactError(const std::string& stage)
        : std::runtime_error("missing artifact from stage '" + stage +
                             "'; run that stage first"),
          stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct StageRecord {
    std::map<std::string, std::string> inputs;   // name -> sha256
    std::map<std::string, std::string> outputs;  // run-dir-relative path -> sha256
};

struct RunManifest {
    std::string tool_version = kToolVersion;
    std::string config_hash;
    std::vector<std::string> defaults_applied;  // config keys that used defaults
    std::map<std::string, StageRecord> stages;
};

std::optional<RunManifest> load_manifest(const std::string& path);  // corrupt -> nullopt
void save_manifest(const RunManifest& manifest, const std::string& path);

/// Hit iff the stage completed with identical input hashes and every recorded
/// output still matches on disk. Mismatches degrade to a miss with a warning.
bool stage_cache_lookup(const RunManifest& manifest, const std::string& stage,
                        const std::map<std::string, std::string>& input_hashes,
                        const std::filesystem::path& run_dir);

class Pipeline {
public:
    Pipeline(Config config, const std::string& out_dir_override = "", int jobs = 1);

    const std::filesystem::path& run_dir() const { return run_dir_; }
    const Config& config() const { return config_; }

    void run_synth();
    void run_fit_predictor();
    void run_attack();
    void run_risk();
    void run_cluster();
    void run_fit_detector();
    void run_evaluate();
    void run_report();
    void run_all();

private:
    std::vector<PatientTrace> load_cohort() const;
    void require_artifacts(const std::string& producer_stage,
                           const std::vector<std::string>& rel_paths) const;
    bool begin_stage(const std::string& stage,
                     const std::map<std::string, std::string>& inputs);
    void finish_stage(const std::string& stage,
                      const std::map<std::string, std::string>& inputs,
                      const std::vector<std::string>& outputs);
    std::string section_hash(const std::string& name) const;

    Config config_;
    std::filesystem::path run_dir_;
    RunManifest manifest_;
    int jobs_ = 1;
};

int cli_main(int argc, char** argv);

}  // namespace riskprof
