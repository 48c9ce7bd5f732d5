#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"
#include "delayprop/pipeline.hpp"

using namespace delayprop;
using namespace delayprop::pipeline;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config() {
    nlohmann::json j = to_json(desk_config());
    apply_override(j, "sim.n_rps=24");
    apply_override(j, "sim.n_trains_per_day=10");
    apply_override(j, "split.train_days=3");
    apply_override(j, "split.test_days=1");
    apply_override(j, "split.validation_days=1");
    apply_override(j, "snapshot.spacing_minutes=60");
    apply_override(j, "evaluation.spacing_minutes=60");
    apply_override(j, "embeddings.length_samples=300");
    apply_override(j, "embeddings.knn_resamples=49");
    apply_override(j, "embeddings.rp.epochs=3");
    apply_override(j, "embeddings.train.epochs=2");
    apply_override(j, "embeddings.train.samples_per_epoch=256");
    apply_override(j, "forecaster.d_model=8");
    apply_override(j, "forecaster.d_ff=16");
    apply_override(j, "forecaster.epochs=2");
    return pipeline_config_from_json(j);
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("delayprop_pipeline_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("FNV-1a reference vectors") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
    CHECK(hex(0xabcULL) == "0000000000000abc");
}

TEST_CASE("pipeline config: round trip, overrides and rejection") {
    const auto cfg = desk_config();
    const auto back = pipeline_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(back.sim.days == 25);
    CHECK(back.evaluation.snapshot.n_foll == back.forecaster.n_foll);

    auto j = to_json(cfg);
    apply_override(j, "forecaster.epochs=3");
    apply_override(j, "forecaster.transform=log");
    const auto o = pipeline_config_from_json(j);
    CHECK(o.forecaster.epochs == 3);
    CHECK(o.forecaster.transform == TransformKind::log);

    j["mystery"] = 1;
    CHECK_THROWS_AS(pipeline_config_from_json(j), ConfigError);
    j = to_json(cfg);
    j["split"]["validation_days"] = 20;
    CHECK_THROWS_AS(pipeline_config_from_json(j), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);
    // section seeds follow the global seed
    auto k = to_json(cfg);
    k["seed"] = 2;
    CHECK(pipeline_config_from_json(k).sim.seed != cfg.sim.seed);
}

TEST_CASE("evaluate without a checkpoint names the train stage") {
    const auto dir = scratch("missing");
    const auto cfg = tiny_config();
    run_pipeline(cfg, dir, {"simulate", "clean"});
    try {
        run_pipeline(cfg, dir, {"evaluate"});
        FAIL("expected a DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("'train'") != std::string::npos);
    }
    CHECK_THROWS_AS(run_pipeline(cfg, dir, {"bogus"}), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("pipeline: idempotent re-run and deterministic artifacts") {
    const auto a = scratch("a");
    const auto b = scratch("b");
    const auto cfg = tiny_config();
    const auto first = run_pipeline(cfg, a);
    CHECK(first.executed == stage_names());
    const auto again = run_pipeline(cfg, a);
    CHECK(again.executed.empty());
    CHECK(again.skipped == stage_names());

    run_pipeline(cfg, b);
    CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
    CHECK(slurp(a / "model.ckpt") == slurp(b / "model.ckpt"));

    const auto metrics = nlohmann::json::parse(slurp(a / "metrics.json"));
    for (const char* k : {"transformer", "translation", "ar2", "bayes"}) CHECK(metrics.contains(k));
    for (const auto& [stage, rec] : manifest_from_json(nlohmann::json::parse(slurp(a / "manifest.json"))).stages) {
        for (const auto& [file, h] : rec.outputs) CHECK(hex(file_hash(a / file)) == h);
    }

    // a changed forecaster section re-runs training and evaluation only
    auto j = to_json(cfg);
    apply_override(j, "forecaster.epochs=1");
    const auto changed = run_pipeline(pipeline_config_from_json(j), a);
    CHECK(changed.executed == std::vector<std::string>{"train", "evaluate"});
    fs::remove_all(a);
    fs::remove_all(b);
}
