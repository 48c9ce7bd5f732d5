#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "delayprop/embeddings.hpp"
#include "delayprop/evalkit.hpp"
#include "delayprop/forecaster.hpp"
#include "delayprop/simgen.hpp"

namespace delayprop::pipeline {

struct SplitConfig {
    int train_days = 20;
    int test_days = 5;
    int validation_days = 0;  // taken from the end of the training days
};

struct EmbeddingStageConfig {
    RpEmbeddingConfig rp;
    TrainEmbeddingConfig train;
    std::size_t length_samples = 6000;
    std::size_t knn_k = 5;
    int knn_resamples = 999;
};

struct BaselineConfig {
    double bayes_window_minutes = 30.0;
    double ridge_lambda = 1e-3;
};

/// One JSON document with a section per module.
struct PipelineConfig {
    std::uint64_t seed = 1;
    sim::SimConfig sim;
    SplitConfig split;
    double snapshot_spacing_minutes = 15.0;
    double h_arr = 30.0;
    double h_dep = 30.0;
    EmbeddingStageConfig embeddings;
    ForecastConfig forecaster;
    BaselineConfig baselines;
    eval::EvalConfig evaluation;

    /// Seeds of each module derived from `seed`, and the snapshot parameters
    /// matching the forecaster windows.
    void resolve();
    SnapshotParams snapshot_params() const;
    void validate() const;  // throws ConfigError
};

nlohmann::json to_json(const PipelineConfig& cfg);
/// Missing keys keep their defaults; unknown top-level sections are rejected.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::string& path);
/// Sets a dotted key (e.g. "forecaster.epochs") from its textual value.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Desk-scale defaults: 25 simulated days with noise on the raw log.
PipelineConfig desk_config();

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t file_hash(const std::filesystem::path& path);
std::string hex(std::uint64_t h);

struct StageRecord {
    std::string key;  // hash of the stage inputs
    std::map<std::string, std::string> outputs;  // file name -> content hash
};

struct RunManifest {
    std::string config_hash;
    std::map<std::string, std::uint64_t> seeds;
    std::string output_dir;
    std::map<std::string, StageRecord> stages;
    std::vector<std::string> executed;  // stages run in this invocation
    std::vector<std::string> skipped;   // up to date
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Stage names in dependency order.
const std::vector<std::string>& stage_names();

/// Runs the requested stages (all when empty) in order. A stage whose inputs
/// and outputs match the manifest is skipped. Missing upstream artifacts
/// throw DataError naming the stage that produces them.
RunManifest run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
                         const std::vector<std::string>& stages = {}, std::ostream* log = nullptr);

// Artifact access shared by the command-line tool.
struct Artifacts {
    std::filesystem::path dir;

    std::filesystem::path path(const std::string& name) const { return dir / name; }
    /// Throws DataError naming `stage` if the file is absent.
    std::filesystem::path require(const std::string& name, const std::string& stage) const;
};

EventLog load_clean_events(const Artifacts& a);
std::vector<std::int64_t> day_indices(const PipelineConfig& cfg);
std::vector<eval::EvalDay> test_days(const PipelineConfig& cfg, const EventLog& cleaned);

/// Named predictors over the artifacts: transformer, translation, ar2, bayes.
eval::Predictor load_predictor(const std::string& kind, const Artifacts& a, const EventLog& cleaned);

}  // namespace delayprop::pipeline
