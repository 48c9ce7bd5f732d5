#include "delayprop/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"

namespace delayprop::eval {

using nlohmann::json;

namespace {

json metric_json(const Metric& m) {
    return {{"value", m.available() ? json(m.value) : json(nullptr)}, {"count", m.count}};
}

Metric metric_from(const json& j) {
    Metric m;
    m.count = j.at("count").get<std::size_t>();
    if (!j.at("value").is_null()) m.value = j.at("value").get<double>();
    return m;
}

Metric percentage(std::size_t hits, std::size_t total) {
    Metric m;
    m.count = total;
    if (total) m.value = 100.0 * static_cast<double>(hits) / static_cast<double>(total);
    return m;
}

const TrainToken* find_token(const Snapshot& snap, std::int64_t train, std::size_t* row) {
    for (std::size_t i = 0; i < snap.tokens.size(); ++i) {
        if (snap.tokens[i].train_number == train) {
            *row = i;
            return &snap.tokens[i];
        }
    }
    return nullptr;
}

Eigen::MatrixXd checked_predict(const Predictor& predictor, const Snapshot& snap) {
    auto p = predictor(snap);
    const auto cols = snap.tokens.empty() ? 0 : static_cast<Eigen::Index>(snap.tokens.front().future.size());
    if (p.rows() != static_cast<Eigen::Index>(snap.tokens.size()) || (p.rows() > 0 && p.cols() != cols)) {
        throw DataError("predictor output does not match the snapshot shape");
    }
    if (!p.allFinite()) throw NumericError("predictor produced non-finite delays");
    return p;
}

}  // namespace

json to_json(const MetricReport& r) {
    return {{"mae", metric_json(r.mae)},
            {"mse", metric_json(r.mse)},
            {"incident_pct", metric_json(r.incident)},
            {"service_pct", metric_json(r.service)},
            {"clip_violations", r.clip_violations}};
}

MetricReport metric_report_from_json(const json& j) {
    try {
        MetricReport r;
        r.mae = metric_from(j.at("mae"));
        r.mse = metric_from(j.at("mse"));
        r.incident = metric_from(j.at("incident_pct"));
        r.service = metric_from(j.at("service_pct"));
        r.clip_violations = j.value("clip_violations", std::size_t{0});
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed metric report: ") + e.what());
    }
}

void ErrorAccumulator::add(double prediction, double realized) {
    const double e = prediction - realized;
    abs_ += std::abs(e);
    sq_ += e * e;
    ++n_;
}

Metric ErrorAccumulator::mae() const {
    Metric m;
    m.count = n_;
    if (n_) m.value = abs_ / static_cast<double>(n_);
    return m;
}

Metric ErrorAccumulator::mse() const {
    Metric m;
    m.count = n_;
    if (n_) m.value = sq_ / static_cast<double>(n_);
    return m;
}

std::pair<Metric, Metric> mae_mse(const std::vector<double>& predictions, const std::vector<double>& realized,
                                  const std::vector<std::uint8_t>& mask) {
    if (predictions.size() != realized.size() || predictions.size() != mask.size()) {
        throw DataError("mae_mse inputs differ in length");
    }
    ErrorAccumulator acc;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (mask[i]) acc.add(predictions[i], realized[i]);
    }
    return {acc.mae(), acc.mse()};
}

bool is_station_stop(const FutureEntry& entry) {
    return entry.type && (*entry.type == ObsType::A || *entry.type == ObsType::T) && rp_kind(entry.rp) == RpKind::station;
}

EvalDay make_eval_day(const EventLog& cleaned, std::int64_t day) {
    EvalDay d;
    d.day = day;
    for (const auto& e : cleaned) {
        if (day_index(e.time) == day) d.events.push_back(e);
    }
    d.plan = plan_view_from_events(d.events, day);
    return d;
}

void accumulate_errors(const Predictor& predictor, const EvalDay& day, const EvalConfig& cfg, ErrorAccumulator& acc,
                       std::size_t* clip_violations) {
    for (const auto t0 : snapshot_schedule(day.day, cfg.spacing_minutes)) {
        const auto snap = build_snapshot(day.events, day.plan, t0, cfg.snapshot);
        if (snap.tokens.empty()) continue;
        const auto p = checked_predict(predictor, snap);
        for (std::size_t i = 0; i < snap.tokens.size(); ++i) {
            const auto& tok = snap.tokens[i];
            for (std::size_t j = 0; j < tok.future.size(); ++j) {
                const double v = p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (clip_violations && tok.future[j].type && v + tok.future[j].minutes_until < -1e-9) ++*clip_violations;
                if (tok.target_mask[j]) acc.add(v, tok.targets[j]);
            }
        }
    }
}

Metric incident_metric(const Predictor& predictor, const std::vector<EvalDay>& days, const EvalConfig& cfg) {
    std::size_t hits = 0, total = 0;
    for (const auto& day : days) {
        std::map<std::int64_t, Timestamp> first_late;
        for (const auto& e : day.events) {
            if (!is_passenger(category_of(e.train_number)) || e.delay < cfg.incident_threshold) continue;
            auto [it, fresh] = first_late.emplace(e.train_number, e.time);
            if (!fresh) it->second = std::min(it->second, e.time);
        }
        for (const auto& [train, t] : first_late) {
            const auto t0 = t + static_cast<Timestamp>(std::llround(cfg.incident_lag_minutes * 60.0));
            const auto snap = build_snapshot(day.events, day.plan, t0, cfg.snapshot);
            std::size_t row = 0;
            const auto* tok = find_token(snap, train, &row);
            if (!tok) continue;
            const auto p = checked_predict(predictor, snap);
            for (std::size_t j = 0; j < tok->future.size(); ++j) {
                if (!tok->target_mask[j] || !is_station_stop(tok->future[j])) continue;
                ++total;
                if (std::abs(p(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) - tok->targets[j]) <= cfg.tolerance_minutes) ++hits;
            }
        }
    }
    return percentage(hits, total);
}

Metric service_metric(const Predictor& predictor, const std::vector<EvalDay>& days, const EvalConfig& cfg) {
    std::size_t hits = 0, total = 0;
    const auto lead = static_cast<Timestamp>(std::llround(cfg.service_lead_minutes * 60.0));
    for (const auto& day : days) {
        // stops grouped by snapshot time so each snapshot is predicted once
        std::map<Timestamp, std::vector<std::pair<std::int64_t, const PlanEntry*>>> by_t0;
        for (const auto& run : day.plan.runs) {
            if (!is_passenger(category_of(run.train_number))) continue;
            for (const auto& e : run.entries) {
                const FutureEntry probe{e.rp, 0.0, e.type, e.scheduled};
                if (!e.realized_delay || !is_station_stop(probe)) continue;
                by_t0[e.scheduled - lead].emplace_back(run.train_number, &e);
            }
        }
        for (const auto& [t0, stops] : by_t0) {
            const auto snap = build_snapshot(day.events, day.plan, t0, cfg.snapshot);
            const auto p = snap.tokens.empty() ? Eigen::MatrixXd() : checked_predict(predictor, snap);
            for (const auto& [train, entry] : stops) {
                std::size_t row = 0;
                const auto* tok = find_token(snap, train, &row);
                if (!tok) continue;
                for (std::size_t j = 0; j < tok->future.size(); ++j) {
                    const auto& f = tok->future[j];
                    if (!tok->target_mask[j] || f.rp != entry->rp || f.type != entry->type || f.scheduled != entry->scheduled) continue;
                    ++total;
                    if (std::abs(p(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) - tok->targets[j]) <= cfg.tolerance_minutes) ++hits;
                    break;
                }
            }
        }
    }
    return percentage(hits, total);
}

MetricReport evaluate(const Predictor& predictor, const std::vector<EvalDay>& days, const EvalConfig& cfg) {
    MetricReport r;
    ErrorAccumulator acc;
    for (const auto& d : days) accumulate_errors(predictor, d, cfg, acc, &r.clip_violations);
    r.mae = acc.mae();
    r.mse = acc.mse();
    r.incident = incident_metric(predictor, days, cfg);
    r.service = service_metric(predictor, days, cfg);
    return r;
}

Eigen::Vector2d DensityGrid::center(int ix, int iy) const {
    return origin + Eigen::Vector2d((ix + 0.5) * cell.x(), (iy + 0.5) * cell.y());
}

Eigen::Vector2d DensityGrid::argmax() const {
    Eigen::Index r = 0, c = 0;
    values.maxCoeff(&r, &c);
    return center(static_cast<int>(c), static_cast<int>(r));
}

DensityGrid density_grid(const EventLog& events, Timestamp t_center, const RpPositions& positions,
                         const DensityConfig& cfg) {
    if (cfg.nx < 1 || cfg.ny < 1 || !(cfg.bandwidth_fraction > 0.0) || !(cfg.half_window_minutes >= 0.0)) {
        throw ConfigError("density grid needs positive sizes and bandwidth");
    }
    if (positions.empty()) throw DataError("density grid needs RP positions");
    Eigen::Vector2d lo = positions.begin()->second, hi = lo;
    for (const auto& [rp, p] : positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    for (int k = 0; k < 2; ++k) {
        if (hi(k) - lo(k) < 1e-9) {
            lo(k) -= 0.5;
            hi(k) += 0.5;
        }
    }
    DensityGrid g;
    g.nx = cfg.nx;
    g.ny = cfg.ny;
    g.origin = lo;
    g.cell = Eigen::Vector2d((hi.x() - lo.x()) / cfg.nx, (hi.y() - lo.y()) / cfg.ny);
    g.values = Eigen::MatrixXd::Zero(cfg.ny, cfg.nx);
    const double bw = cfg.bandwidth_fraction * (hi - lo).norm();
    const double inv = 1.0 / (2.0 * bw * bw);

    std::vector<std::pair<Eigen::Vector2d, double>> delayed;
    const double half = cfg.half_window_minutes * 60.0;
    for (const auto& e : events) {
        if (std::abs(static_cast<double>(e.time - t_center)) > half || e.delay <= 0) continue;
        const auto it = positions.find(e.rp);
        if (it != positions.end()) delayed.emplace_back(it->second, static_cast<double>(e.delay));
    }
    if (delayed.empty()) return g;
    for (int iy = 0; iy < g.ny; ++iy) {
        for (int ix = 0; ix < g.nx; ++ix) {
            const auto c = g.center(ix, iy);
            double num = 0.0, den = 0.0;
            for (const auto& [p, w] : delayed) num += w * std::exp(-(c - p).squaredNorm() * inv);
            for (const auto& [rp, p] : positions) den += std::exp(-(c - p).squaredNorm() * inv);
            g.values(iy, ix) = num / std::max(den, cfg.epsilon);
        }
    }
    return g;
}

void write_density_csv(std::ostream& out, const DensityGrid& grid) {
    out << "x,y,value\n";
    out.precision(10);
    for (int iy = 0; iy < grid.ny; ++iy) {
        for (int ix = 0; ix < grid.nx; ++ix) {
            const auto c = grid.center(ix, iy);
            out << c.x() << ',' << c.y() << ',' << grid.values(iy, ix) << '\n';
        }
    }
}

}  // namespace delayprop::eval
