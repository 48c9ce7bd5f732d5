#include "delayprop/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"
#include "delayprop/time.hpp"

namespace delayprop::baselines {

using nlohmann::json;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

std::vector<double> translation_predict(const TrainToken& token) {
    return std::vector<double>(token.future.size(), token.translation_delay);
}

Mat translation_snapshot(const Snapshot& snap) {
    const auto width = snap.tokens.empty() ? 0 : snap.tokens.front().future.size();
    Mat out = Mat::Zero(static_cast<Eigen::Index>(snap.tokens.size()), static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < snap.tokens.size(); ++i) out.row(static_cast<Eigen::Index>(i)).setConstant(snap.tokens[i].translation_delay);
    return out;
}

Ar2Params fit_ar2(const std::vector<std::vector<double>>& series) {
    std::size_t rows = 0;
    for (const auto& s : series) rows += s.size() >= 3 ? s.size() - 2 : 0;
    Ar2Params p;
    if (rows == 0) {
        p.fallback = true;
        return p;
    }
    Mat x(static_cast<Eigen::Index>(rows), 3);
    Vec y(static_cast<Eigen::Index>(rows));
    Eigen::Index r = 0;
    for (const auto& s : series) {
        for (std::size_t n = 2; n < s.size(); ++n, ++r) {
            x(r, 0) = s[n - 1];
            x(r, 1) = s[n - 2];
            x(r, 2) = 1.0;
            y(r) = s[n];
        }
    }
    const Vec coef = x.completeOrthogonalDecomposition().solve(y);
    p.alpha = coef(0);
    p.beta = coef(1);
    p.gamma = coef(2);
    p.samples = rows;
    p.residual_variance = (x * coef - y).squaredNorm() / static_cast<double>(rows);
    if (!coef.allFinite()) throw NumericError("AR(2) fit produced non-finite parameters");
    return p;
}

std::vector<double> ar2_predict(const Ar2Params& p, double prev1, double prev2, int steps) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(std::max(steps, 0)));
    for (int k = 0; k < steps; ++k) {
        const double next = p.alpha * prev1 + p.beta * prev2 + p.gamma;
        out.push_back(next);
        prev2 = prev1;
        prev1 = next;
    }
    return out;
}

const Ar2Params* Ar2Model::find(std::int64_t train_number) const {
    const auto it = per_train.find(train_number);
    return it == per_train.end() || it->second.fallback ? nullptr : &it->second;
}

Mat Ar2Model::predict(const Snapshot& snap) const {
    Mat out = translation_snapshot(snap);
    for (std::size_t i = 0; i < snap.tokens.size(); ++i) {
        const auto& tok = snap.tokens[i];
        const auto* params = find(tok.train_number);
        const auto n = tok.past.size();
        if (!params || n < 2 || !tok.past[n - 1].type || !tok.past[n - 2].type) continue;
        const auto f = ar2_predict(*params, tok.past[n - 1].delay, tok.past[n - 2].delay, static_cast<int>(tok.future.size()));
        for (std::size_t j = 0; j < f.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
    }
    return out;
}

Ar2Model fit_ar2_model(const EventLog& history) {
    std::map<std::int64_t, std::map<std::int64_t, std::vector<const ObservationEvent*>>> runs;
    for (const auto& e : history) runs[e.train_number][day_index(e.time)].push_back(&e);
    Ar2Model model;
    for (auto& [train, days] : runs) {
        std::vector<std::vector<double>> series;
        for (auto& [day, evs] : days) {
            std::stable_sort(evs.begin(), evs.end(), [](const auto* a, const auto* b) {
                return std::tie(a->time, a->rank, a->id) < std::tie(b->time, b->rank, b->id);
            });
            std::vector<double> s;
            for (const auto* e : evs) s.push_back(e->delay);
            series.push_back(std::move(s));
        }
        model.per_train[train] = fit_ar2(series);
    }
    return model;
}

json to_json(const Ar2Model& model) {
    json trains = json::array();
    for (const auto& [train, p] : model.per_train) {
        trains.push_back({{"train", train},
                          {"alpha", p.alpha},
                          {"beta", p.beta},
                          {"gamma", p.gamma},
                          {"residual_variance", p.residual_variance},
                          {"samples", p.samples},
                          {"fallback", p.fallback}});
    }
    return {{"kind", "ar2"}, {"trains", trains}};
}

Ar2Model ar2_model_from_json(const json& j) {
    Ar2Model model;
    try {
        for (const auto& t : j.at("trains")) {
            Ar2Params p;
            p.alpha = t.at("alpha").get<double>();
            p.beta = t.at("beta").get<double>();
            p.gamma = t.at("gamma").get<double>();
            p.residual_variance = t.value("residual_variance", 0.0);
            p.samples = t.value("samples", std::size_t{0});
            p.fallback = t.value("fallback", false);
            model.per_train[t.at("train").get<std::int64_t>()] = p;
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed AR(2) model: ") + e.what());
    }
    return model;
}

std::size_t BayesNet::edge_count() const {
    std::size_t n = 0;
    for (const auto& p : parents) n += p.size();
    return n;
}

std::optional<std::size_t> BayesNet::index_of(std::int64_t train_number, const std::string& rp) const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].train_number == train_number && nodes[i].rp == rp) return i;
    }
    return std::nullopt;
}

std::vector<double> BayesNet::evaluate(const std::map<std::size_t, double>& measured) const {
    std::vector<double> l(nodes.size(), 0.0);
    for (std::size_t x = 0; x < nodes.size(); ++x) {
        if (const auto it = measured.find(x); it != measured.end()) {
            l[x] = it->second;
            continue;
        }
        double v = bias[x];
        for (const auto& [y, w] : parents[x]) v += w * l[y];
        l[x] = v;
    }
    return l;
}

std::vector<NodeObservation> node_observations(const EventLog& events) {
    std::map<std::tuple<std::int64_t, std::int64_t, std::string>, NodeObservation> last;
    for (const auto& e : events) {
        const auto key = std::make_tuple(day_index(e.time), e.train_number, e.rp);
        auto it = last.find(key);
        if (it == last.end() || e.time >= it->second.time) {
            last[key] = {std::get<0>(key), e.train_number, e.rp, e.time, e.theoretical_time(), static_cast<double>(e.delay)};
        }
    }
    std::vector<NodeObservation> out;
    out.reserve(last.size());
    for (auto& [k, v] : last) out.push_back(std::move(v));
    return out;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::map<std::pair<std::int64_t, std::string>, std::size_t> node_index(const BayesNet& net) {
    std::map<std::pair<std::int64_t, std::string>, std::size_t> idx;
    for (std::size_t i = 0; i < net.nodes.size(); ++i) idx[{net.nodes[i].train_number, net.nodes[i].rp}] = i;
    return idx;
}

}  // namespace

BayesNet build_bayes_graph(const EventLog& history, double window_minutes) {
    if (!(window_minutes >= 0.0)) throw ConfigError("Bayesian window must be >= 0 minutes");
    std::map<std::pair<std::int64_t, std::string>, std::vector<double>> times;
    for (const auto& o : node_observations(history)) {
        times[{o.train_number, o.rp}].push_back(static_cast<double>(o.scheduled - day_start(o.day)));
    }
    BayesNet net;
    net.window_minutes = window_minutes;
    for (auto& [key, ts] : times) net.nodes.push_back({key.first, key.second, median(ts)});
    std::stable_sort(net.nodes.begin(), net.nodes.end(), [](const BayesNode& a, const BayesNode& b) {
        return std::tie(a.time, a.train_number, a.rp) < std::tie(b.time, b.train_number, b.rp);
    });
    const std::size_t n = net.nodes.size();
    net.parents.assign(n, {});
    net.bias.assign(n, 0.0);
    net.underdetermined.assign(n, 0);
    const double window = window_minutes * 60.0;
    for (std::size_t x = 0; x < n; ++x) {
        const auto& nx = net.nodes[x];
        for (std::size_t y = 0; y < x; ++y) {
            const auto& ny = net.nodes[y];
            if (!(ny.time < nx.time)) continue;
            if (ny.train_number == nx.train_number || ny.rp == nx.rp || nx.time - ny.time <= window) {
                net.parents[x].emplace_back(y, 0.0);
            }
        }
    }
    return net;
}

void fit_bayes(BayesNet& net, const EventLog& history, double lambda) {
    if (!(lambda >= 0.0)) throw ConfigError("ridge lambda must be >= 0");
    const auto idx = node_index(net);
    const std::size_t n = net.nodes.size();
    std::map<std::int64_t, std::map<std::size_t, double>> by_day;
    std::vector<double> sum(n, 0.0);
    std::vector<std::size_t> count(n, 0);
    double total = 0.0;
    std::size_t total_n = 0;
    for (const auto& o : node_observations(history)) {
        const auto it = idx.find({o.train_number, o.rp});
        if (it == idx.end()) continue;
        by_day[o.day][it->second] = o.delay;
        sum[it->second] += o.delay;
        ++count[it->second];
        total += o.delay;
        ++total_n;
    }
    net.global_mean = total_n ? total / static_cast<double>(total_n) : 0.0;
    std::vector<double> mean(n, net.global_mean);
    for (std::size_t i = 0; i < n; ++i) {
        if (count[i]) mean[i] = sum[i] / static_cast<double>(count[i]);
    }
    for (std::size_t x = 0; x < n; ++x) {
        auto& ps = net.parents[x];
        net.underdetermined[x] = 0;
        if (ps.empty() || count[x] == 0) {
            net.bias[x] = mean[x];
            for (auto& p : ps) p.second = 0.0;
            continue;
        }
        const auto rows = static_cast<Eigen::Index>(count[x]);
        const auto cols = static_cast<Eigen::Index>(ps.size());
        Mat a(rows, cols);
        Vec y(rows);
        Eigen::Index r = 0;
        for (const auto& [day, vals] : by_day) {
            const auto own = vals.find(x);
            if (own == vals.end()) continue;
            y(r) = own->second - mean[x];
            for (Eigen::Index c = 0; c < cols; ++c) {
                const auto parent = ps[static_cast<std::size_t>(c)].first;
                const auto pv = vals.find(parent);
                a(r, c) = (pv == vals.end() ? mean[parent] : pv->second) - mean[parent];
            }
            ++r;
        }
        net.underdetermined[x] = rows < cols;
        Vec w;
        if (rows < cols) {
            Mat gram = a * a.transpose();
            gram.diagonal().array() += lambda;
            w = a.transpose() * gram.ldlt().solve(y);
        } else {
            Mat gram = a.transpose() * a;
            gram.diagonal().array() += lambda;
            w = gram.ldlt().solve(a.transpose() * y);
        }
        if (!w.allFinite()) throw NumericError("Bayesian network fit produced non-finite weights");
        double b = mean[x];
        for (Eigen::Index c = 0; c < cols; ++c) {
            ps[static_cast<std::size_t>(c)].second = w(c);
            b -= w(c) * mean[ps[static_cast<std::size_t>(c)].first];
        }
        net.bias[x] = b;
    }
}

BayesPrediction bayes_predict(const BayesNet& net, const EventLog& day_events, const Snapshot& snap) {
    BayesPrediction out;
    const auto width = snap.tokens.empty() ? 0 : snap.tokens.front().future.size();
    out.minutes = Mat::Zero(static_cast<Eigen::Index>(snap.tokens.size()), static_cast<Eigen::Index>(width));
    if (snap.tokens.empty()) return out;
    const auto idx = node_index(net);
    const auto day = day_index(snap.t0);
    EventLog seen;
    for (const auto& e : day_events) {
        if (e.time <= snap.t0 && day_index(e.time) == day) seen.push_back(e);
    }
    std::map<std::size_t, double> measured;
    for (const auto& o : node_observations(seen)) {
        if (const auto it = idx.find({o.train_number, o.rp}); it != idx.end()) measured[it->second] = o.delay;
    }
    const auto l = net.evaluate(measured);
    for (std::size_t i = 0; i < snap.tokens.size(); ++i) {
        const auto& tok = snap.tokens[i];
        for (std::size_t j = 0; j < tok.future.size(); ++j) {
            const auto& f = tok.future[j];
            double v = net.global_mean;
            if (!f.type) v = tok.translation_delay;
            else if (const auto it = idx.find({tok.train_number, f.rp}); it != idx.end()) v = l[it->second];
            else ++out.unseen;
            out.minutes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    }
    return out;
}

json to_json(const BayesNet& net) {
    json nodes = json::array();
    json edges = json::array();
    for (std::size_t x = 0; x < net.nodes.size(); ++x) {
        const auto& n = net.nodes[x];
        nodes.push_back({{"train", n.train_number},
                         {"rp", n.rp},
                         {"time", n.time},
                         {"bias", net.bias[x]},
                         {"underdetermined", static_cast<bool>(net.underdetermined[x])}});
        for (const auto& [y, w] : net.parents[x]) edges.push_back({y, x, w});
    }
    return {{"kind", "bayes"},
            {"window_minutes", net.window_minutes},
            {"global_mean", net.global_mean},
            {"nodes", nodes},
            {"edges", edges}};
}

BayesNet bayes_net_from_json(const json& j) {
    BayesNet net;
    try {
        net.window_minutes = j.at("window_minutes").get<double>();
        net.global_mean = j.at("global_mean").get<double>();
        for (const auto& n : j.at("nodes")) {
            net.nodes.push_back({n.at("train").get<std::int64_t>(), n.at("rp").get<std::string>(), n.at("time").get<double>()});
            net.bias.push_back(n.at("bias").get<double>());
            net.underdetermined.push_back(n.value("underdetermined", false));
        }
        net.parents.assign(net.nodes.size(), {});
        for (const auto& e : j.at("edges")) {
            const auto y = e.at(0).get<std::size_t>();
            const auto x = e.at(1).get<std::size_t>();
            if (x >= net.nodes.size() || y >= x) throw DataError("Bayesian network edge breaks topological order");
            net.parents[x].emplace_back(y, e.at(2).get<double>());
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed Bayesian network: ") + e.what());
    }
    return net;
}

}  // namespace delayprop::baselines
