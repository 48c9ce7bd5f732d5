#include "delayprop/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>

#include "delayprop/baselines.hpp"
#include "delayprop/errors.hpp"
#include "delayprop/railgraph.hpp"

namespace delayprop::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

// --- configuration ---------------------------------------------------------------

void PipelineConfig::resolve() {
    sim.seed = sim::mix_seed(seed, 1);
    embeddings.rp.seed = sim::mix_seed(seed, 2);
    embeddings.train.seed = sim::mix_seed(seed, 3);
    forecaster.seed = sim::mix_seed(seed, 4);
    sim.days = split.train_days + split.test_days;
    evaluation.snapshot = snapshot_params();
}

SnapshotParams PipelineConfig::snapshot_params() const {
    SnapshotParams p;
    p.n_prev = forecaster.n_prev;
    p.n_foll = forecaster.n_foll;
    p.h_arr_minutes = h_arr;
    p.h_dep_minutes = h_dep;
    return p;
}

void PipelineConfig::validate() const {
    sim.validate();
    forecaster.validate();
    if (split.train_days < 1 || split.test_days < 1) throw ConfigError("split needs at least one training and one test day");
    if (split.validation_days < 0 || split.validation_days >= split.train_days) {
        throw ConfigError("validation_days must leave at least one training day");
    }
    if (!(snapshot_spacing_minutes > 0.0) || !(evaluation.spacing_minutes > 0.0)) throw ConfigError("snapshot spacing must be > 0");
    if (!(h_arr >= 0.0) || !(h_dep >= 0.0)) throw ConfigError("snapshot horizons must be >= 0");
    if (embeddings.length_samples < 1 || embeddings.knn_k < 1 || embeddings.knn_resamples < 1) {
        throw ConfigError("embedding stage sizes must be >= 1");
    }
    if (!(baselines.bayes_window_minutes >= 0.0) || !(baselines.ridge_lambda >= 0.0)) {
        throw ConfigError("baseline window and ridge lambda must be >= 0");
    }
    if (!(evaluation.tolerance_minutes >= 0.0)) throw ConfigError("tolerance must be >= 0");
}

json to_json(const PipelineConfig& c) {
    const auto& e = c.embeddings;
    const auto& v = c.evaluation;
    return {{"seed", c.seed},
            {"sim", to_json(c.sim)},
            {"split", {{"train_days", c.split.train_days}, {"test_days", c.split.test_days}, {"validation_days", c.split.validation_days}}},
            {"snapshot", {{"spacing_minutes", c.snapshot_spacing_minutes}, {"h_arr", c.h_arr}, {"h_dep", c.h_dep}}},
            {"embeddings",
             {{"length_samples", e.length_samples},
              {"knn_k", e.knn_k},
              {"knn_resamples", e.knn_resamples},
              {"rp", {{"d_rp", e.rp.d_rp}, {"hidden", e.rp.hidden}, {"epochs", e.rp.epochs}, {"batch", e.rp.batch}, {"lr", e.rp.lr}}},
              {"train",
               {{"d_train", e.train.d_train},
                {"hidden", e.train.hidden},
                {"epochs", e.train.epochs},
                {"samples_per_epoch", e.train.samples_per_epoch},
                {"batch", e.train.batch},
                {"lr", e.train.lr},
                {"freeze_rp", e.train.freeze_rp}}}}},
            {"forecaster", to_json(c.forecaster)},
            {"baselines", {{"bayes_window_minutes", c.baselines.bayes_window_minutes}, {"ridge_lambda", c.baselines.ridge_lambda}}},
            {"evaluation",
             {{"spacing_minutes", v.spacing_minutes},
              {"tolerance_minutes", v.tolerance_minutes},
              {"incident_threshold", v.incident_threshold},
              {"incident_lag_minutes", v.incident_lag_minutes},
              {"service_lead_minutes", v.service_lead_minutes}}}};
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig c;
    try {
        reject_unknown(j, {"seed", "sim", "split", "snapshot", "embeddings", "forecaster", "baselines", "evaluation"}, "config");
        read(j, "seed", c.seed);
        if (j.contains("sim")) c.sim = sim::sim_config_from_json(j.at("sim"));
        if (j.contains("split")) {
            const auto& s = j.at("split");
            reject_unknown(s, {"train_days", "test_days", "validation_days"}, "split");
            read(s, "train_days", c.split.train_days);
            read(s, "test_days", c.split.test_days);
            read(s, "validation_days", c.split.validation_days);
        }
        if (j.contains("snapshot")) {
            const auto& s = j.at("snapshot");
            reject_unknown(s, {"spacing_minutes", "h_arr", "h_dep"}, "snapshot");
            read(s, "spacing_minutes", c.snapshot_spacing_minutes);
            read(s, "h_arr", c.h_arr);
            read(s, "h_dep", c.h_dep);
        }
        if (j.contains("embeddings")) {
            const auto& s = j.at("embeddings");
            reject_unknown(s, {"length_samples", "knn_k", "knn_resamples", "rp", "train"}, "embeddings");
            auto& e = c.embeddings;
            read(s, "length_samples", e.length_samples);
            read(s, "knn_k", e.knn_k);
            read(s, "knn_resamples", e.knn_resamples);
            if (s.contains("rp")) {
                const auto& r = s.at("rp");
                reject_unknown(r, {"d_rp", "hidden", "epochs", "batch", "lr"}, "embeddings.rp");
                read(r, "d_rp", e.rp.d_rp);
                read(r, "hidden", e.rp.hidden);
                read(r, "epochs", e.rp.epochs);
                read(r, "batch", e.rp.batch);
                read(r, "lr", e.rp.lr);
            }
            if (s.contains("train")) {
                const auto& t = s.at("train");
                reject_unknown(t, {"d_train", "hidden", "epochs", "samples_per_epoch", "batch", "lr", "freeze_rp"}, "embeddings.train");
                read(t, "d_train", e.train.d_train);
                read(t, "hidden", e.train.hidden);
                read(t, "epochs", e.train.epochs);
                read(t, "samples_per_epoch", e.train.samples_per_epoch);
                read(t, "batch", e.train.batch);
                read(t, "lr", e.train.lr);
                read(t, "freeze_rp", e.train.freeze_rp);
            }
        }
        if (j.contains("forecaster")) c.forecaster = forecast_config_from_json(j.at("forecaster"));
        if (j.contains("baselines")) {
            const auto& s = j.at("baselines");
            reject_unknown(s, {"bayes_window_minutes", "ridge_lambda"}, "baselines");
            read(s, "bayes_window_minutes", c.baselines.bayes_window_minutes);
            read(s, "ridge_lambda", c.baselines.ridge_lambda);
        }
        if (j.contains("evaluation")) {
            const auto& s = j.at("evaluation");
            reject_unknown(s, {"spacing_minutes", "tolerance_minutes", "incident_threshold", "incident_lag_minutes", "service_lead_minutes"},
                           "evaluation");
            auto& v = c.evaluation;
            read(s, "spacing_minutes", v.spacing_minutes);
            read(s, "tolerance_minutes", v.tolerance_minutes);
            read(s, "incident_threshold", v.incident_threshold);
            read(s, "incident_lag_minutes", v.incident_lag_minutes);
            read(s, "service_lead_minutes", v.service_lead_minutes);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.resolve();
    c.validate();
    return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    try {
        return pipeline_config_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const auto key = assignment.substr(0, eq);
    const auto text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;  // bare strings
    }
    json* node = &j;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (!node->contains(path[i])) (*node)[path[i]] = json::object();
        node = &(*node)[path[i]];
    }
    (*node)[path.back()] = value;
}

PipelineConfig desk_config() {
    PipelineConfig c;
    c.sim.noise.duplicate_prob = 0.05;
    c.sim.noise.swap_prob = 0.02;
    c.resolve();
    return c;
}

// --- hashing and manifest -----------------------------------------------------

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<char> buf(1 << 16);
    while (in.read(buf.data(), static_cast<std::streamsize>(buf.size())) || in.gcount() > 0) {
        h = fnv1a(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
    }
    return h;
}

std::string hex(std::uint64_t h) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

json to_json(const RunManifest& m) {
    json stages = json::object();
    for (const auto& [name, rec] : m.stages) stages[name] = {{"key", rec.key}, {"outputs", rec.outputs}};
    return {{"config_hash", m.config_hash}, {"seeds", m.seeds}, {"output_dir", m.output_dir}, {"stages", stages},
            {"executed", m.executed}, {"skipped", m.skipped}};
}

RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    try {
        m.config_hash = j.value("config_hash", std::string{});
        m.output_dir = j.value("output_dir", std::string{});
        if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
        for (const auto& [name, s] : j.at("stages").items()) {
            m.stages[name] = {s.at("key").get<std::string>(), s.at("outputs").get<std::map<std::string, std::string>>()};
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"simulate", "clean", "snapshot", "train-embeddings", "train", "baseline", "evaluate"};
    return names;
}

fs::path Artifacts::require(const std::string& name, const std::string& stage) const {
    const auto p = path(name);
    if (!fs::exists(p)) throw DataError("missing artifact " + p.string() + "; run stage '" + stage + "' first");
    return p;
}

// --- artifact helpers -----------------------------------------------------------

namespace {

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << j.dump(1) << '\n';
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot read " + p.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

EventLog events_on(const EventLog& events, const std::vector<std::int64_t>& days) {
    const std::set<std::int64_t> keep(days.begin(), days.end());
    EventLog out;
    for (const auto& e : events) {
        if (keep.count(day_index(e.time))) out.push_back(e);
    }
    return out;
}

struct Split {
    std::vector<std::int64_t> fit, validation, test;
};

Split split_days(const PipelineConfig& cfg) {
    const auto days = day_indices(cfg);
    Split s;
    const auto n_fit = static_cast<std::size_t>(cfg.split.train_days - cfg.split.validation_days);
    for (std::size_t i = 0; i < days.size(); ++i) {
        if (i < n_fit) s.fit.push_back(days[i]);
        else if (i < static_cast<std::size_t>(cfg.split.train_days)) s.validation.push_back(days[i]);
        else s.test.push_back(days[i]);
    }
    return s;
}

std::vector<Snapshot> snapshots_for(const EventLog& cleaned, const std::vector<std::int64_t>& days, double spacing,
                                    const SnapshotParams& params) {
    std::vector<Snapshot> out;
    for (const auto day : days) {
        const auto events = events_on(cleaned, {day});
        const auto view = plan_view_from_events(events, day);
        for (const auto t0 : snapshot_schedule(day, spacing)) {
            auto s = build_snapshot(events, view, t0, params);
            if (!s.tokens.empty()) out.push_back(std::move(s));
        }
    }
    return out;
}

json snapshots_json(const std::vector<Snapshot>& snaps) {
    json arr = json::array();
    for (const auto& s : snaps) arr.push_back(to_json(s, true));
    return arr;
}

std::vector<Snapshot> read_snapshots(const fs::path& p) {
    std::vector<Snapshot> out;
    for (const auto& j : read_json(p)) out.push_back(snapshot_from_json(j));
    return out;
}

std::string hub_of(const NetworkGraph& g) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < g.nodes().size(); ++i) {
        if (g.degree(i) > g.degree(best)) best = i;
    }
    return g.nodes().at(best);
}

// --- stages -----------------------------------------------------------------------

void stage_simulate(const PipelineConfig& cfg, const Artifacts& a) {
    const auto net = sim::generate_network(cfg.sim);
    const auto plan = sim::generate_plan(net, cfg.sim);
    EventLog truth;
    for (int d = 0; d < cfg.sim.days; ++d) {
        const auto day = sim::simulate_day(net, plan, cfg.sim, d);
        truth.insert(truth.end(), day.events.begin(), day.events.end());
    }
    sort_canonical(truth);
    sim::NoiseReport noise;
    const auto raw = sim::inject_noise(truth, cfg.sim.noise, sim::mix_seed(cfg.seed, 5), &noise);
    write_json(a.path("network.json"), to_json(net));
    write_json(a.path("plan.json"), to_json(plan));
    write_events_csv_file(a.path("events_truth.csv").string(), truth);
    write_events_csv_file(a.path("events_raw.csv").string(), raw);
    write_json(a.path("sim_report.json"),
               {{"events", truth.size()},
                {"raw_rows", raw.size()},
                {"noise", {{"dropped", noise.dropped}, {"duplicated", noise.duplicated}, {"swapped", noise.swapped}}},
                {"calibration", to_json(sim::calibration_report(truth))}});
}

void stage_clean(const PipelineConfig&, const Artifacts& a) {
    CsvReadReport read_report;
    const auto raw = read_events_csv_file(a.require("events_raw.csv", "simulate").string(), &read_report);
    CleanReport rep;
    const auto cleaned = clean_events(raw, &rep);
    write_events_csv_file(a.path("events_clean.csv").string(), cleaned);
    write_json(a.path("clean_report.json"),
               {{"input_rows", rep.input_rows},
                {"malformed_rows", read_report.malformed},
                {"duplicates_removed", rep.duplicates_removed},
                {"ranks_reordered", rep.ranks_reordered},
                {"groups_reordered", rep.groups_reordered},
                {"output_rows", cleaned.size()}});
}

void stage_snapshot(const PipelineConfig& cfg, const Artifacts& a) {
    const auto cleaned = load_clean_events(a);
    const auto split = split_days(cfg);
    const auto params = cfg.snapshot_params();
    write_json(a.path("snapshots_train.json"), snapshots_json(snapshots_for(cleaned, split.fit, cfg.snapshot_spacing_minutes, params)));
    write_json(a.path("snapshots_val.json"), snapshots_json(snapshots_for(cleaned, split.validation, cfg.snapshot_spacing_minutes, params)));
}

void stage_embeddings(const PipelineConfig& cfg, const Artifacts& a) {
    const auto split = split_days(cfg);
    const auto events = events_on(load_clean_events(a), split.fit);
    const auto net = sim::network_from_json(read_json(a.require("network.json", "simulate")));
    const auto graph = build_graph(events);
    std::mt19937_64 rng(cfg.embeddings.rp.seed);
    const auto data = make_length_dataset(graph, cfg.embeddings.length_samples, rng);
    const auto rp = train_rp_embedding(data, rp_vocabulary(graph), cfg.embeddings.rp);
    const auto tr = train_trainnum_embedding(itineraries_from_events(events), MaskingLaw{}, rp.table, cfg.embeddings.train);
    save_table_binary(a.path("rp_table.bin").string(), tr.rps);
    save_table_binary(a.path("train_table.bin").string(), tr.trains);

    // diagnostics on the graph nodes only; stand-ins have no position
    std::vector<std::string> keys;
    Eigen::MatrixXd vecs(static_cast<Eigen::Index>(graph.nodes().size()), tr.rps.dim());
    for (const auto& id : graph.nodes()) {
        vecs.row(static_cast<Eigen::Index>(keys.size())) = tr.rps.vectors().row(static_cast<Eigen::Index>(*tr.rps.index_of(id)));
        keys.push_back(id);
    }
    const EmbeddingTable nodes(keys, vecs);
    std::mt19937_64 diag_rng(sim::mix_seed(cfg.seed, 6));
    Eigen::MatrixXd random_vecs(vecs.rows(), vecs.cols());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < random_vecs.size(); ++i) random_vecs(i) = normal(diag_rng);
    const EmbeddingTable random(keys, random_vecs);
    const auto locality = knn_locality(nodes, graph, cfg.embeddings.knn_k, cfg.embeddings.knn_resamples, diag_rng);
    const auto hub = hub_of(graph);
    const auto probe = linear_probe_distance(nodes, net.positions, hub, cfg.seed);
    const auto null_probe = linear_probe_distance(random, net.positions, hub, cfg.seed);
    write_json(a.path("embeddings_report.json"),
               {{"length_mse", rp.final_mse},
                {"train_loss", tr.final_loss},
                {"train_accuracy", tr.accuracy},
                {"knn", {{"k", cfg.embeddings.knn_k}, {"observed", locality.observed}, {"null_mean", locality.null_mean}, {"p_value", locality.p_value}}},
                {"probe", {{"hub", hub}, {"r2", probe.r2}, {"random_r2", null_probe.r2}, {"n_test", probe.n_test}}}});
}

void stage_train(const PipelineConfig& cfg, const Artifacts& a) {
    const auto train = read_snapshots(a.require("snapshots_train.json", "snapshot"));
    const auto val = read_snapshots(a.require("snapshots_val.json", "snapshot"));
    Forecaster model(cfg.forecaster, load_table_binary(a.require("rp_table.bin", "train-embeddings").string()),
                     load_table_binary(a.require("train_table.bin", "train-embeddings").string()));
    const auto result = fit(model, train, val, a.path("diverged.ckpt").string());
    model.save(a.path("model.ckpt").string());
    json curve = json::array();
    for (const auto& e : result.curve) {
        curve.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss},
                         {"val_mae", std::isnan(e.val_mae) ? json(nullptr) : json(e.val_mae)}});
    }
    write_json(a.path("training_curve.json"), {{"snapshots", train.size()}, {"curve", curve}});
}

void stage_baseline(const PipelineConfig& cfg, const Artifacts& a) {
    const auto events = events_on(load_clean_events(a), split_days(cfg).fit);
    write_json(a.path("ar2.json"), baselines::to_json(baselines::fit_ar2_model(events)));
    auto net = baselines::build_bayes_graph(events, cfg.baselines.bayes_window_minutes);
    baselines::fit_bayes(net, events, cfg.baselines.ridge_lambda);
    write_json(a.path("bayes.json"), baselines::to_json(net));
}

void stage_evaluate(const PipelineConfig& cfg, const Artifacts& a) {
    const auto cleaned = load_clean_events(a);
    a.require("model.ckpt", "train");
    a.require("ar2.json", "baseline");
    a.require("bayes.json", "baseline");
    const auto days = test_days(cfg, cleaned);
    json out = json::object();
    for (const std::string kind : {"transformer", "translation", "ar2", "bayes"}) {
        out[kind] = eval::to_json(eval::evaluate(load_predictor(kind, a, cleaned), days, cfg.evaluation));
    }
    const double t = out["transformer"]["mae"]["value"].get<double>();
    const double b = out["translation"]["mae"]["value"].get<double>();
    out["relative_improvement_vs_translation"] = b > 0 ? (b - t) / b : 0.0;
    write_json(a.path("metrics.json"), out);
}

struct StageSpec {
    std::string name;
    std::vector<std::pair<std::string, std::string>> inputs;  // file, producing stage
    std::vector<std::string> outputs;
    std::function<json(const PipelineConfig&)> section;
    std::function<void(const PipelineConfig&, const Artifacts&)> run;
};

const std::vector<StageSpec>& stage_specs() {
    static const std::vector<StageSpec> specs{
        {"simulate", {}, {"network.json", "plan.json", "events_truth.csv", "events_raw.csv", "sim_report.json"},
         [](const PipelineConfig& c) { return json{{"seed", c.seed}, {"sim", to_json(c.sim)}}; }, stage_simulate},
        {"clean", {{"events_raw.csv", "simulate"}}, {"events_clean.csv", "clean_report.json"},
         [](const PipelineConfig&) { return json::object(); }, stage_clean},
        {"snapshot", {{"events_clean.csv", "clean"}}, {"snapshots_train.json", "snapshots_val.json"},
         [](const PipelineConfig& c) { const auto j = to_json(c); return json{{"split", j["split"]}, {"snapshot", j["snapshot"]}, {"windows", {c.forecaster.n_prev, c.forecaster.n_foll}}}; },
         stage_snapshot},
        {"train-embeddings", {{"events_clean.csv", "clean"}, {"network.json", "simulate"}},
         {"rp_table.bin", "train_table.bin", "embeddings_report.json"},
         [](const PipelineConfig& c) { const auto j = to_json(c); return json{{"seed", c.seed}, {"split", j["split"]}, {"embeddings", j["embeddings"]}}; },
         stage_embeddings},
        {"train",
         {{"snapshots_train.json", "snapshot"}, {"snapshots_val.json", "snapshot"}, {"rp_table.bin", "train-embeddings"}, {"train_table.bin", "train-embeddings"}},
         {"model.ckpt", "training_curve.json"},
         [](const PipelineConfig& c) { return json{{"forecaster", to_json(c.forecaster)}}; }, stage_train},
        {"baseline", {{"events_clean.csv", "clean"}}, {"ar2.json", "bayes.json"},
         [](const PipelineConfig& c) { const auto j = to_json(c); return json{{"split", j["split"]}, {"baselines", j["baselines"]}}; },
         stage_baseline},
        {"evaluate",
         {{"events_clean.csv", "clean"}, {"model.ckpt", "train"}, {"ar2.json", "baseline"}, {"bayes.json", "baseline"}},
         {"metrics.json"},
         [](const PipelineConfig& c) { const auto j = to_json(c); return json{{"split", j["split"]}, {"evaluation", j["evaluation"]}, {"snapshot", j["snapshot"]}}; },
         stage_evaluate},
    };
    return specs;
}

}  // namespace

EventLog load_clean_events(const Artifacts& a) {
    return read_events_csv_file(a.require("events_clean.csv", "clean").string());
}

std::vector<std::int64_t> day_indices(const PipelineConfig& cfg) {
    const auto start = day_index(parse_timestamp(cfg.sim.start_date + " 00:00:00"));
    std::vector<std::int64_t> days;
    for (int d = 0; d < cfg.split.train_days + cfg.split.test_days; ++d) days.push_back(start + d);
    return days;
}

std::vector<eval::EvalDay> test_days(const PipelineConfig& cfg, const EventLog& cleaned) {
    std::vector<eval::EvalDay> out;
    for (const auto d : split_days(cfg).test) out.push_back(eval::make_eval_day(cleaned, d));
    return out;
}

eval::Predictor load_predictor(const std::string& kind, const Artifacts& a, const EventLog& cleaned) {
    if (kind == "translation") return [](const Snapshot& s) { return baselines::translation_snapshot(s); };
    if (kind == "transformer") {
        auto model = std::make_shared<Forecaster>(Forecaster::load(a.require("model.ckpt", "train").string()));
        return [model](const Snapshot& s) { return model->predict(s, PredictMode::evaluation).minutes; };
    }
    if (kind == "ar2") {
        auto model = std::make_shared<baselines::Ar2Model>(baselines::ar2_model_from_json(read_json(a.require("ar2.json", "baseline"))));
        return [model](const Snapshot& s) { return model->predict(s); };
    }
    if (kind == "bayes") {
        auto net = std::make_shared<baselines::BayesNet>(baselines::bayes_net_from_json(read_json(a.require("bayes.json", "baseline"))));
        auto events = std::make_shared<EventLog>(cleaned);
        return [net, events](const Snapshot& s) { return baselines::bayes_predict(*net, *events, s).minutes; };
    }
    throw ConfigError("unknown predictor '" + kind + "' (transformer, translation, ar2, bayes)");
}

RunManifest run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir, const std::vector<std::string>& stages,
                         std::ostream* log) {
    for (const auto& s : stages) {
        if (std::find(stage_names().begin(), stage_names().end(), s) == stage_names().end()) {
            throw ConfigError("unknown stage '" + s + "'");
        }
    }
    fs::create_directories(out_dir);
    const Artifacts a{out_dir};
    const auto manifest_path = a.path("manifest.json");
    RunManifest m;
    if (fs::exists(manifest_path)) m = manifest_from_json(read_json(manifest_path));
    m.executed.clear();
    m.skipped.clear();
    m.output_dir = out_dir.string();
    m.config_hash = hex(fnv1a(to_json(cfg).dump()));
    m.seeds = {{"global", cfg.seed}, {"sim", cfg.sim.seed}, {"rp_embedding", cfg.embeddings.rp.seed},
               {"train_embedding", cfg.embeddings.train.seed}, {"forecaster", cfg.forecaster.seed}};

    for (const auto& spec : stage_specs()) {
        if (!stages.empty() && std::find(stages.begin(), stages.end(), spec.name) == stages.end()) continue;
        std::string key_text = spec.name + spec.section(cfg).dump();
        for (const auto& [file, producer] : spec.inputs) key_text += file + ":" + hex(file_hash(a.require(file, producer)));
        const auto key = hex(fnv1a(key_text));
        const auto it = m.stages.find(spec.name);
        bool fresh = it != m.stages.end() && it->second.key == key && it->second.outputs.size() == spec.outputs.size();
        if (fresh) {
            for (const auto& [file, h] : it->second.outputs) {
                if (!fs::exists(a.path(file)) || hex(file_hash(a.path(file))) != h) fresh = false;
            }
        }
        if (fresh) {
            m.skipped.push_back(spec.name);
            if (log) *log << "[" << spec.name << "] up to date\n";
            continue;
        }
        if (log) *log << "[" << spec.name << "] running\n" << std::flush;
        spec.run(cfg, a);
        StageRecord rec{key, {}};
        for (const auto& file : spec.outputs) rec.outputs[file] = hex(file_hash(a.path(file)));
        m.stages[spec.name] = rec;
        m.executed.push_back(spec.name);
        write_json(manifest_path, to_json(m));
    }
    write_json(manifest_path, to_json(m));
    return m;
}

}  // namespace delayprop::pipeline
