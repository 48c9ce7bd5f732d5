#include "delayprop/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"
#include "delayprop/simgen.hpp"
#include "delayprop/time.hpp"

namespace delayprop {

using nlohmann::json;
using Mat = Eigen::MatrixXd;

double value_transform(double x, TransformKind kind) {
    const double s = x < 0 ? -1.0 : 1.0;
    switch (kind) {
        case TransformKind::identity: return x;
        case TransformKind::sqrt: return s * std::sqrt(std::abs(x));
        case TransformKind::log: return s * std::log1p(std::abs(x));
    }
    return x;
}

double value_untransform(double y, TransformKind kind) {
    const double s = y < 0 ? -1.0 : 1.0;
    switch (kind) {
        case TransformKind::identity: return y;
        case TransformKind::sqrt: return std::abs(y) * y;
        case TransformKind::log: return s * std::expm1(std::abs(y));
    }
    return y;
}

std::string to_string(TransformKind kind) {
    switch (kind) {
        case TransformKind::identity: return "identity";
        case TransformKind::sqrt: return "sqrt";
        case TransformKind::log: return "log";
    }
    return "?";
}

TransformKind transform_from_string(const std::string& s) {
    if (s == "identity") return TransformKind::identity;
    if (s == "sqrt") return TransformKind::sqrt;
    if (s == "log") return TransformKind::log;
    throw ConfigError("unknown value transform '" + s + "'");
}

void ForecastConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("forecast config: " + m); };
    if (depth < 1) fail("depth must be >= 1");
    if (heads < 1 || d_model < 1 || d_model % heads != 0) fail("heads must divide d_model");
    if (d_ff < 1) fail("d_ff must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
    if (n_prev < 1 || n_foll < 1) fail("n_prev and n_foll must be >= 1");
    if (!(lr > 0.0)) fail("learning rate must be > 0");
    if (batch < 1) fail("batch must be >= 1");
    if (epochs < 0) fail("epochs must be >= 0");
}

json to_json(const ForecastConfig& c) {
    return {{"d_model", c.d_model}, {"d_ff", c.d_ff},       {"heads", c.heads},
            {"depth", c.depth},     {"dropout", c.dropout}, {"n_prev", c.n_prev},
            {"n_foll", c.n_foll},   {"transform", to_string(c.transform)},
            {"lr", c.lr},           {"batch", c.batch},     {"epochs", c.epochs},
            {"center_targets", c.center_targets},           {"seed", c.seed}};
}

ForecastConfig forecast_config_from_json(const json& j) {
    ForecastConfig c;
    try {
        c.d_model = j.value("d_model", c.d_model);
        c.d_ff = j.value("d_ff", c.d_ff);
        c.heads = j.value("heads", c.heads);
        c.depth = j.value("depth", c.depth);
        c.dropout = j.value("dropout", c.dropout);
        c.n_prev = j.value("n_prev", c.n_prev);
        c.n_foll = j.value("n_foll", c.n_foll);
        if (j.contains("transform")) c.transform = transform_from_string(j.at("transform").get<std::string>());
        c.lr = j.value("lr", c.lr);
        c.batch = j.value("batch", c.batch);
        c.epochs = j.value("epochs", c.epochs);
        c.center_targets = j.value("center_targets", c.center_targets);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("forecast config: ") + e.what());
    }
    c.validate();
    return c;
}

double predict_delay(double y, const TargetStats& stats, TransformKind kind, double translation, double scheduled,
                     PredictMode mode) {
    const double v = stats.sigma * value_untransform(y, kind) + stats.mu + translation;
    if (mode == PredictMode::training) return v;
    return std::max(v + scheduled, 0.0) - scheduled;
}

json to_json(const AttentionSnapshot& a) {
    json heads = json::array();
    for (const auto& h : a.heads) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < h.rows(); ++i) {
            const Eigen::RowVectorXd r = h.row(i);
            rows.push_back(std::vector<double>(r.data(), r.data() + r.size()));
        }
        heads.push_back(rows);
    }
    return {{"t0", format_timestamp(a.t0)}, {"trains", a.trains}, {"heads", heads}};
}

namespace {

constexpr int kCategories = kTrainCategoryCount;
constexpr int kTypes = kObsTypeCount;

Eigen::RowVectorXd embedding_or_zero(const EmbeddingTable& table, std::string_view key) {
    const auto i = table.index_of(key);
    if (!i) return Eigen::RowVectorXd::Zero(table.dim());
    return table.vectors().row(static_cast<Eigen::Index>(*i));
}

FeatureStats::Z z_of(const std::vector<double>& v) {
    FeatureStats::Z z;
    if (v.empty()) return z;
    z.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double sq = 0;
    for (const double x : v) sq += (x - z.mean) * (x - z.mean);
    z.std = std::sqrt(sq / static_cast<double>(v.size()));
    if (z.std < 1e-9) z.std = 1.0;
    return z;
}

json z_json(const FeatureStats::Z& z) { return {z.mean, z.std}; }
FeatureStats::Z z_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

Forecaster::Forecaster(ForecastConfig cfg, EmbeddingTable rp_table, EmbeddingTable train_table)
    : cfg_(std::move(cfg)), rp_(std::move(rp_table)), trains_(std::move(train_table)) {
    cfg_.validate();
    std::mt19937_64 rng(sim::mix_seed(cfg_.seed, 0xf0ca57ULL));
    in_ = nn::Linear<double>("input", feature_width(), cfg_.d_model, rng);
    encoder_ = nn::Encoder<double>("encoder", cfg_.depth, cfg_.d_model, cfg_.heads, cfg_.d_ff, cfg_.dropout, rng);
    out_ = nn::Linear<double>("output", cfg_.d_model, cfg_.n_foll, rng);
    out_.weight.value.setZero();
}

int Forecaster::feature_width() const {
    const int d_rp = rp_.dim();
    return trains_.dim() + kCategories + cfg_.n_prev * (d_rp + 2 + kTypes) + cfg_.n_foll * (d_rp + 1 + kTypes) + 1 + 7 + 2;
}

void Forecaster::fit_stats(const std::vector<Snapshot>& snapshots) {
    std::vector<double> since, delay, until, trans, minute, count, residual;
    for (const auto& s : snapshots) {
        if (s.tokens.empty()) continue;
        minute.push_back(s.exogenous.minute_of_day);
        count.push_back(s.exogenous.n_trains);
        for (const auto& tok : s.tokens) {
            trans.push_back(value_transform(tok.translation_delay, cfg_.transform));
            for (const auto& p : tok.past) {
                if (!p.type) continue;
                since.push_back(p.minutes_since);
                delay.push_back(value_transform(p.delay, cfg_.transform));
            }
            for (std::size_t j = 0; j < tok.future.size(); ++j) {
                if (tok.future[j].type) until.push_back(tok.future[j].minutes_until);
                if (j < tok.target_mask.size() && tok.target_mask[j]) residual.push_back(tok.targets[j] - tok.translation_delay);
            }
        }
    }
    feature_stats = {z_of(since), z_of(delay), z_of(until), z_of(trans), z_of(minute), z_of(count)};
    target_stats = {};
    if (!residual.empty()) {
        if (cfg_.center_targets) target_stats.mu = std::accumulate(residual.begin(), residual.end(), 0.0) / static_cast<double>(residual.size());
        double sq = 0;
        for (const double r : residual) sq += (r - target_stats.mu) * (r - target_stats.mu);
        target_stats.sigma = std::sqrt(sq / static_cast<double>(residual.size()));
        if (target_stats.sigma < 1e-9) target_stats.sigma = 1.0;
    }
}

Mat Forecaster::features(const Snapshot& snap) const {
    const int d_rp = rp_.dim();
    Mat x = Mat::Zero(static_cast<Eigen::Index>(snap.tokens.size()), feature_width());
    const auto& fs = feature_stats;
    for (std::size_t i = 0; i < snap.tokens.size(); ++i) {
        const auto& tok = snap.tokens[i];
        if (static_cast<int>(tok.past.size()) != cfg_.n_prev || static_cast<int>(tok.future.size()) != cfg_.n_foll) {
            throw DataError("snapshot windows do not match the model's n_prev/n_foll");
        }
        auto row = x.row(static_cast<Eigen::Index>(i));
        Eigen::Index at = 0;
        row.segment(at, trains_.dim()) = embedding_or_zero(trains_, std::to_string(tok.train_number));
        at += trains_.dim();
        row(at + static_cast<int>(tok.category)) = 1.0;
        at += kCategories;
        for (const auto& p : tok.past) {
            row.segment(at, d_rp) = embedding_or_zero(rp_, p.rp);
            at += d_rp;
            if (p.type) {
                row(at) = fs.minutes_since.apply(p.minutes_since);
                row(at + 1) = fs.past_delay.apply(value_transform(p.delay, cfg_.transform));
                row(at + 2 + static_cast<int>(*p.type)) = 1.0;
            }
            at += 2 + kTypes;
        }
        for (const auto& f : tok.future) {
            row.segment(at, d_rp) = embedding_or_zero(rp_, f.rp);
            at += d_rp;
            if (f.type) {
                row(at) = fs.minutes_until.apply(f.minutes_until);
                row(at + 1 + static_cast<int>(*f.type)) = 1.0;
            }
            at += 1 + kTypes;
        }
        row(at++) = fs.translation.apply(value_transform(tok.translation_delay, cfg_.transform));
        row(at + snap.exogenous.day_of_week) = 1.0;
        at += 7;
        row(at++) = fs.minute_of_day.apply(snap.exogenous.minute_of_day);
        row(at++) = fs.n_trains.apply(snap.exogenous.n_trains);
    }
    return x;
}

void Forecaster::targets(const Snapshot& snap, Mat& y, Mat& mask) const {
    const auto n = static_cast<Eigen::Index>(snap.tokens.size());
    y = Mat::Zero(n, cfg_.n_foll);
    mask = Mat::Zero(n, cfg_.n_foll);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& tok = snap.tokens[static_cast<std::size_t>(i)];
        for (int j = 0; j < cfg_.n_foll && j < static_cast<int>(tok.target_mask.size()); ++j) {
            if (!tok.target_mask[static_cast<std::size_t>(j)] || !tok.future[static_cast<std::size_t>(j)].type) continue;
            const double r = tok.targets[static_cast<std::size_t>(j)] - tok.translation_delay;
            y(i, j) = value_transform((r - target_stats.mu) / target_stats.sigma, cfg_.transform);
            mask(i, j) = 1.0;
        }
    }
}

nn::Var<double> Forecaster::forward(nn::Tape<double>& t, const Mat& features, std::mt19937_64& rng, bool train,
                                    AttentionSnapshot* attention) {
    if (features.cols() != feature_width()) throw DataError("token feature width does not match the model");
    std::vector<std::vector<Mat>> weights;
    auto h = in_(t, t.constant(features));
    h = encoder_(t, h, rng, train, attention ? &weights : nullptr);
    if (attention) attention->heads = weights.front();
    return out_(t, h);
}

Prediction Forecaster::predict(const Snapshot& snap, PredictMode mode, AttentionSnapshot* attention) {
    Prediction p;
    const auto n = static_cast<Eigen::Index>(snap.tokens.size());
    p.raw = Mat::Zero(n, cfg_.n_foll);
    p.minutes = Mat::Zero(n, cfg_.n_foll);
    p.valid = Mat::Zero(n, cfg_.n_foll);
    p.scheduled = Mat::Zero(n, cfg_.n_foll);
    if (attention) {
        attention->t0 = snap.t0;
        attention->trains.clear();
        attention->heads.clear();
        for (const auto& tok : snap.tokens) attention->trains.push_back(tok.train_number);
    }
    if (n == 0) return p;
    std::mt19937_64 unused(0);
    nn::Tape<double> t;
    p.raw = forward(t, features(snap), unused, false, attention).value();
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& tok = snap.tokens[static_cast<std::size_t>(i)];
        for (int j = 0; j < cfg_.n_foll; ++j) {
            const auto& f = tok.future[static_cast<std::size_t>(j)];
            p.scheduled(i, j) = f.minutes_until;
            p.valid(i, j) = f.type ? 1.0 : 0.0;
            p.minutes(i, j) = predict_delay(p.raw(i, j), target_stats, cfg_.transform, tok.translation_delay, f.minutes_until, mode);
        }
    }
    return p;
}

nn::ParamList<double> Forecaster::parameters() {
    nn::ParamList<double> list;
    in_.collect(list);
    encoder_.collect(list);
    out_.collect(list);
    return list;
}

void Forecaster::save(const std::string& path) {
    const auto& fs = feature_stats;
    const json meta{{"kind", "forecaster"},
                    {"config", to_json(cfg_)},
                    {"target_stats", {target_stats.mu, target_stats.sigma}},
                    {"feature_stats",
                     {z_json(fs.minutes_since), z_json(fs.past_delay), z_json(fs.minutes_until), z_json(fs.translation),
                      z_json(fs.minute_of_day), z_json(fs.n_trains)}},
                    {"rp_table", to_json(rp_)},
                    {"train_table", to_json(trains_)}};
    nn::save_checkpoint(path, parameters(), meta);
}

Forecaster Forecaster::load(const std::string& path) {
    const json meta = nn::load_checkpoint(path, {});
    if (meta.value("kind", std::string{}) != "forecaster") throw DataError(path + " is not a forecaster checkpoint");
    try {
        Forecaster model(forecast_config_from_json(meta.at("config")), embedding_table_from_json(meta.at("rp_table")),
                         embedding_table_from_json(meta.at("train_table")));
        model.target_stats = {meta.at("target_stats").at(0).get<double>(), meta.at("target_stats").at(1).get<double>()};
        const auto& f = meta.at("feature_stats");
        model.feature_stats = {z_from(f.at(0)), z_from(f.at(1)), z_from(f.at(2)), z_from(f.at(3)), z_from(f.at(4)), z_from(f.at(5))};
        nn::load_checkpoint(path, model.parameters());
        return model;
    } catch (const json::exception& e) {
        throw DataError("malformed forecaster checkpoint " + path + ": " + e.what());
    }
}

nn::Var<double> training_loss(nn::Var<double> raw, const Mat& targets, const Mat& mask, bool* empty) {
    if (empty) *empty = mask.sum() == 0.0;
    return nn::masked_l1(raw, targets, mask);
}

FitResult fit(Forecaster& model, const std::vector<Snapshot>& train, const std::vector<Snapshot>& validation,
              const std::string& diagnostic_path) {
    const auto& cfg = model.config();
    if (train.empty()) throw DataError("no training snapshots");
    model.fit_stats(train);

    struct Prepared {
        Mat x, y, mask;
    };
    std::vector<Prepared> data;
    for (const auto& s : train) {
        if (s.tokens.empty()) continue;
        Prepared p;
        p.x = model.features(s);
        model.targets(s, p.y, p.mask);
        if (p.mask.sum() > 0) data.push_back(std::move(p));
    }
    if (data.empty()) throw DataError("training snapshots carry no valid targets");

    std::mt19937_64 rng(sim::mix_seed(cfg.seed, 0x5eedULL));
    auto params = model.parameters();
    nn::Adam<double> opt(params, {.lr = cfg.lr});
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    FitResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            const double weight = 1.0 / static_cast<double>(stop - start);
            opt.zero_grad();
            for (std::size_t b = start; b < stop; ++b) {
                const auto& d = data[order[b]];
                nn::Tape<double> t;
                const auto loss = training_loss(model.forward(t, d.x, rng, true), d.y, d.mask);
                const double value = loss.value()(0, 0);
                if (!std::isfinite(value)) {
                    if (!diagnostic_path.empty()) model.save(diagnostic_path);
                    throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
                }
                total += value;
                t.backward(nn::scale(loss, weight));
            }
            opt.step();
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = total / static_cast<double>(data.size());
        stats.val_mae = validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : forecaster_mae(model, validation, PredictMode::evaluation);
        result.curve.push_back(stats);
    }
    return result;
}

double forecaster_mae(Forecaster& model, const std::vector<Snapshot>& snaps, PredictMode mode) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& s : snaps) {
        const auto p = model.predict(s, mode);
        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
            const auto& tok = s.tokens[i];
            for (std::size_t j = 0; j < tok.target_mask.size(); ++j) {
                if (!tok.target_mask[j]) continue;
                total += std::abs(p.minutes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - tok.targets[j]);
                ++count;
            }
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace delayprop
