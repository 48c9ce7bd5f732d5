#include <fstream>
#include <sstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"
#include "delayprop/pipeline.hpp"

using namespace delayprop;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::string out = "run";
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "pipeline config JSON (desk defaults when omitted)");
    cmd->add_option("-o,--out", c.out, "artifact directory");
    cmd->add_option("--set", c.overrides, "override a config key, e.g. forecaster.epochs=5");
}

pipeline::PipelineConfig resolve_config(const Common& c) {
    json j = c.config.empty() ? pipeline::to_json(pipeline::desk_config()) : json();
    if (!c.config.empty()) {
        std::ifstream in(c.config);
        if (!in) throw ConfigError("cannot open config " + c.config);
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config " + c.config + " is not valid JSON: " + e.what());
        }
    }
    for (const auto& o : c.overrides) pipeline::apply_override(j, o);
    return pipeline::pipeline_config_from_json(j);
}

Snapshot snapshot_at(const pipeline::PipelineConfig& cfg, const EventLog& cleaned, const std::string& at) {
    const auto t0 = parse_timestamp(at);
    const auto day = day_index(t0);
    EventLog events;
    for (const auto& e : cleaned) {
        if (day_index(e.time) == day) events.push_back(e);
    }
    auto snap = build_snapshot(events, plan_view_from_events(events, day), t0, cfg.snapshot_params());
    if (!snap.warning.empty()) std::cerr << "warning: " << snap.warning << '\n';
    return snap;
}

int run(int argc, char** argv) {
    CLI::App app{"Train-delay forecasting: simulation, training and evaluation"};
    app.require_subcommand(1);
    Common common;
    std::string stages, at, predictor = "transformer", kind, csv_path;

    std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
    for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
             {"simulate", "generate the network, plan and event logs"},
             {"clean", "deduplicate and re-rank the raw log"},
             {"snapshot", "build training snapshots"},
             {"train-embeddings", "pre-train RP and train-number embeddings"},
             {"train", "fit the transformer forecaster"},
             {"evaluate", "score the transformer and baselines on the test days"}}) {
        auto* cmd = app.add_subcommand(name, help);
        add_common(cmd, common);
        stage_cmds.emplace_back(cmd, name);
    }
    auto* pipe = app.add_subcommand("pipeline", "run every stage (or a comma-separated subset)");
    add_common(pipe, common);
    pipe->add_option("--stages", stages, "e.g. simulate,clean");

    auto* base = app.add_subcommand("baseline", "fit and score one baseline on the test days");
    add_common(base, common);
    base->add_option("--kind", kind, "translation, ar2 or bayes")->required()->check(CLI::IsMember({"translation", "ar2", "bayes"}));

    auto* pred = app.add_subcommand("predict", "predict the snapshot at a given time");
    add_common(pred, common);
    pred->add_option("--at", at, "YYYY-MM-DD HH:MM:SS")->required();
    pred->add_option("--predictor", predictor, "transformer, translation, ar2 or bayes");

    auto* dens = app.add_subcommand("density", "delay density grid as x,y,value CSV");
    add_common(dens, common);
    dens->add_option("--at", at, "YYYY-MM-DD HH:MM:SS")->required();
    dens->add_option("--csv", csv_path, "output file (stdout when omitted)");

    auto* att = app.add_subcommand("attention", "first-layer attention maps of a snapshot");
    add_common(att, common);
    att->add_option("--at", at, "YYYY-MM-DD HH:MM:SS")->required();

    auto* show = app.add_subcommand("config", "print the resolved configuration");
    add_common(show, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    const auto cfg = resolve_config(common);
    const pipeline::Artifacts artifacts{common.out};

    for (const auto& [cmd, name] : stage_cmds) {
        if (!cmd->parsed()) continue;
        const auto m = pipeline::run_pipeline(cfg, common.out, {name}, &std::cerr);
        if (name == "evaluate") {
            std::ifstream in(artifacts.path("metrics.json"));
            std::cout << in.rdbuf();
        }
        return 0;
    }
    if (pipe->parsed()) {
        std::vector<std::string> list;
        std::stringstream ss(stages);
        for (std::string s; std::getline(ss, s, ',');) {
            if (!s.empty()) list.push_back(s);
        }
        const auto m = pipeline::run_pipeline(cfg, common.out, list, &std::cerr);
        std::cout << pipeline::to_json(m).dump(2) << '\n';
        return 0;
    }
    if (show->parsed()) {
        std::cout << pipeline::to_json(cfg).dump(2) << '\n';
        return 0;
    }
    if (base->parsed()) {
        if (kind != "translation") pipeline::run_pipeline(cfg, common.out, {"baseline"}, &std::cerr);
        const auto cleaned = pipeline::load_clean_events(artifacts);
        const auto report = eval::evaluate(pipeline::load_predictor(kind, artifacts, cleaned), pipeline::test_days(cfg, cleaned),
                                           cfg.evaluation);
        std::cout << json{{kind, eval::to_json(report)}}.dump(2) << '\n';
        return 0;
    }
    const auto cleaned = pipeline::load_clean_events(artifacts);
    const auto snap = snapshot_at(cfg, cleaned, at);
    if (pred->parsed()) {
        const auto p = pipeline::load_predictor(predictor, artifacts, cleaned)(snap);
        json tokens = json::array();
        for (std::size_t i = 0; i < snap.tokens.size(); ++i) {
            const auto& tok = snap.tokens[i];
            json future = json::array();
            for (std::size_t j = 0; j < tok.future.size(); ++j) {
                if (!tok.future[j].type) continue;
                future.push_back({{"rp", tok.future[j].rp},
                                  {"scheduled", format_timestamp(tok.future[j].scheduled)},
                                  {"predicted_delay", p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))}});
            }
            tokens.push_back({{"train", tok.train_number}, {"translation_delay", tok.translation_delay}, {"future", future}});
        }
        std::cout << json{{"t0", format_timestamp(snap.t0)}, {"predictor", predictor}, {"trains", tokens}}.dump(2) << '\n';
    } else if (dens->parsed()) {
        std::ifstream in(artifacts.require("network.json", "simulate"));
        const auto net = sim::network_from_json(json::parse(in));
        const auto grid = eval::density_grid(cleaned, snap.t0, net.positions);
        if (csv_path.empty()) {
            eval::write_density_csv(std::cout, grid);
        } else {
            std::ofstream out(csv_path);
            if (!out) throw DataError("cannot write " + csv_path);
            eval::write_density_csv(out, grid);
        }
    } else if (att->parsed()) {
        auto model = Forecaster::load(artifacts.require("model.ckpt", "train").string());
        AttentionSnapshot a;
        model.predict(snap, PredictMode::evaluation, &a);
        std::cout << to_json(a).dump(1) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::config);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::data);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::numeric);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
