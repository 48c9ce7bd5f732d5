#include "delayprop/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <numbers>
#include <numeric>
#include <queue>
#include <set>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"

namespace delayprop::sim {

using nlohmann::json;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a combined word
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void SimConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("sim config: " + msg); };
    if (n_rps < 10) fail("n_rps must be >= 10");
    if (grade_separated_rps != 0 && grade_separated_rps < 3) fail("grade_separated_rps must be 0 or >= 3");
    if (n_rps - grade_separated_rps < 8) fail("main network needs at least 8 RPs");
    if (n_routes < 1) fail("n_routes must be >= 1");
    if (n_trains_per_day < 1) fail("n_trains_per_day must be >= 1");
    if (!(headway_minutes > 0.0)) fail("headway_minutes must be > 0");
    if (dwell_minutes < 0.0) fail("dwell_minutes must be >= 0");
    if (regulation_minutes < 0.0) fail("regulation_minutes must be >= 0");
    if (default_platforms < 1) fail("platform counts must be >= 1");
    for (const auto& [rp, count] : platform_counts) {
        if (count < 1) fail("platform count for " + rp + " must be >= 1");
    }
    auto prob = [&](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) fail(std::string(name) + " must be in [0,1]");
    };
    prob(origin_delay.p_zero, "origin_delay.p_zero");
    prob(segment_delay.p_zero, "segment_delay.p_zero");
    prob(freight_fraction, "freight_fraction");
    prob(recovery_fraction, "recovery_fraction");
    prob(noise.drop_prob, "noise.drop_prob");
    prob(noise.duplicate_prob, "noise.duplicate_prob");
    prob(noise.swap_prob, "noise.swap_prob");
    if (origin_delay.log_sigma < 0.0 || segment_delay.log_sigma < 0.0) fail("log_sigma must be >= 0");
    if (days < 1) fail("days must be >= 1");
    if (auto_bias_edges < 0) fail("auto_bias_edges must be >= 0");
    for (const auto& t : turnaround_pairs) {
        if (t.min_turnaround_minutes < 0.0) fail("turnaround minutes must be >= 0");
    }
    parse_timestamp(start_date + " 00:00:00");
}

namespace {

json law_to_json(const DelayLaw& law) {
    return {{"p_zero", law.p_zero}, {"log_mu", law.log_mu}, {"log_sigma", law.log_sigma},
            {"cap_minutes", law.cap_minutes}};
}

DelayLaw law_from_json(const json& j, DelayLaw law) {
    law.p_zero = j.value("p_zero", law.p_zero);
    law.log_mu = j.value("log_mu", law.log_mu);
    law.log_sigma = j.value("log_sigma", law.log_sigma);
    law.cap_minutes = j.value("cap_minutes", law.cap_minutes);
    return law;
}

}  // namespace

json to_json(const SimConfig& cfg) {
    json biases = json::array();
    for (const auto& b : cfg.plan_bias_edges) biases.push_back({b.a, b.b, b.minutes});
    json turns = json::array();
    for (const auto& t : cfg.turnaround_pairs) turns.push_back({t.up, t.down, t.min_turnaround_minutes});
    json injected = json::object();
    for (const auto& [train, minutes] : cfg.injected_origin_delays) injected[std::to_string(train)] = minutes;
    return {
        {"seed", cfg.seed},
        {"n_rps", cfg.n_rps},
        {"grade_separated_rps", cfg.grade_separated_rps},
        {"n_routes", cfg.n_routes},
        {"n_trains_per_day", cfg.n_trains_per_day},
        {"freight_fraction", cfg.freight_fraction},
        {"headway_minutes", cfg.headway_minutes},
        {"regulation_minutes", cfg.regulation_minutes},
        {"dwell_minutes", cfg.dwell_minutes},
        {"default_platforms", cfg.default_platforms},
        {"platform_counts", cfg.platform_counts},
        {"origin_delay", law_to_json(cfg.origin_delay)},
        {"segment_delay", law_to_json(cfg.segment_delay)},
        {"recovery_fraction", cfg.recovery_fraction},
        {"plan_bias_edges", biases},
        {"auto_bias_edges", cfg.auto_bias_edges},
        {"turnaround_pairs", turns},
        {"auto_turnarounds", cfg.auto_turnarounds},
        {"auto_turnaround_minutes", cfg.auto_turnaround_minutes},
        {"enforce_headway", cfg.enforce_headway},
        {"enforce_platforms", cfg.enforce_platforms},
        {"enforce_turnarounds", cfg.enforce_turnarounds},
        {"injected_origin_delays", injected},
        {"noise",
         {{"drop_prob", cfg.noise.drop_prob},
          {"duplicate_prob", cfg.noise.duplicate_prob},
          {"swap_prob", cfg.noise.swap_prob}}},
        {"days", cfg.days},
        {"start_date", cfg.start_date},
    };
}

SimConfig sim_config_from_json(const json& j) {
    SimConfig cfg;
    try {
        cfg.seed = j.value("seed", cfg.seed);
        cfg.n_rps = j.value("n_rps", cfg.n_rps);
        cfg.grade_separated_rps = j.value("grade_separated_rps", cfg.grade_separated_rps);
        cfg.n_routes = j.value("n_routes", cfg.n_routes);
        cfg.n_trains_per_day = j.value("n_trains_per_day", cfg.n_trains_per_day);
        cfg.freight_fraction = j.value("freight_fraction", cfg.freight_fraction);
        cfg.headway_minutes = j.value("headway_minutes", cfg.headway_minutes);
        cfg.regulation_minutes = j.value("regulation_minutes", cfg.regulation_minutes);
        cfg.dwell_minutes = j.value("dwell_minutes", cfg.dwell_minutes);
        cfg.default_platforms = j.value("default_platforms", cfg.default_platforms);
        if (j.contains("platform_counts")) {
            cfg.platform_counts = j.at("platform_counts").get<std::map<std::string, int>>();
        }
        if (j.contains("origin_delay")) cfg.origin_delay = law_from_json(j.at("origin_delay"), cfg.origin_delay);
        if (j.contains("segment_delay")) cfg.segment_delay = law_from_json(j.at("segment_delay"), cfg.segment_delay);
        cfg.recovery_fraction = j.value("recovery_fraction", cfg.recovery_fraction);
        if (j.contains("plan_bias_edges")) {
            for (const auto& b : j.at("plan_bias_edges")) {
                cfg.plan_bias_edges.push_back({b.at(0).get<std::string>(), b.at(1).get<std::string>(),
                                               b.at(2).get<double>()});
            }
        }
        cfg.auto_bias_edges = j.value("auto_bias_edges", cfg.auto_bias_edges);
        if (j.contains("turnaround_pairs")) {
            for (const auto& t : j.at("turnaround_pairs")) {
                cfg.turnaround_pairs.push_back(
                    {t.at(0).get<std::int64_t>(), t.at(1).get<std::int64_t>(), t.at(2).get<double>()});
            }
        }
        cfg.auto_turnarounds = j.value("auto_turnarounds", cfg.auto_turnarounds);
        cfg.auto_turnaround_minutes = j.value("auto_turnaround_minutes", cfg.auto_turnaround_minutes);
        cfg.enforce_headway = j.value("enforce_headway", cfg.enforce_headway);
        cfg.enforce_platforms = j.value("enforce_platforms", cfg.enforce_platforms);
        cfg.enforce_turnarounds = j.value("enforce_turnarounds", cfg.enforce_turnarounds);
        if (j.contains("injected_origin_delays")) {
            for (const auto& [k, v] : j.at("injected_origin_delays").items()) {
                cfg.injected_origin_delays[std::stoll(k)] = v.get<double>();
            }
        }
        if (j.contains("noise")) {
            const auto& n = j.at("noise");
            cfg.noise.drop_prob = n.value("drop_prob", 0.0);
            cfg.noise.duplicate_prob = n.value("duplicate_prob", 0.0);
            cfg.noise.swap_prob = n.value("swap_prob", 0.0);
        }
        cfg.days = j.value("days", cfg.days);
        cfg.start_date = j.value("start_date", cfg.start_date);
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("sim config: ") + ex.what());
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Network

namespace {

std::string make_rp_id(int index, const char* suffix) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d%s", 110000 + 137 * index, suffix);
    return buf;
}

struct ProtoNode {
    Eigen::Vector2d pos;
    double heading = 0.0;
    std::vector<int> nbrs;
};

}  // namespace

SimNetwork generate_network(const SimConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x6e6574));
    std::uniform_int_distribution<int> minutes_dist(2, 15);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int n_main = cfg.n_rps - cfg.grade_separated_rps;
    std::vector<ProtoNode> nodes;
    std::vector<std::tuple<int, int, int>> edges;  // a, b, minutes

    auto extend = [&](int from, double heading, int length) {
        int prev = from;
        for (int i = 0; i < length; ++i) {
            heading += (unit(rng) - 0.5) * 0.4;
            const int minutes = minutes_dist(rng);
            ProtoNode n;
            n.pos = nodes[prev].pos + minutes * Eigen::Vector2d(std::cos(heading), std::sin(heading));
            n.heading = heading;
            nodes.push_back(n);
            const int cur = static_cast<int>(nodes.size()) - 1;
            nodes[prev].nbrs.push_back(cur);
            nodes[cur].nbrs.push_back(prev);
            edges.emplace_back(prev, cur, minutes);
            prev = cur;
        }
    };

    // Trunk line, then branches grown from interior degree-2 nodes.
    nodes.push_back({Eigen::Vector2d::Zero(), unit(rng) * 2.0 * std::numbers::pi, {}});
    const int trunk = std::max(4, n_main / 3);
    extend(0, nodes[0].heading, trunk - 1);
    while (static_cast<int>(nodes.size()) < n_main) {
        std::vector<int> candidates;
        for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
            if (nodes[i].nbrs.size() == 2) candidates.push_back(i);
        }
        const int attach = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
        const int remaining = n_main - static_cast<int>(nodes.size());
        const int length = std::min(remaining, std::uniform_int_distribution<int>(3, 8)(rng));
        const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
        const double turn = side * (0.5 + 0.7 * unit(rng));
        extend(attach, nodes[attach].heading + turn, length);
    }

    SimNetwork net;
    std::vector<std::string> ids(nodes.size());
    auto label = [&](int i) {
        const std::size_t deg = nodes[i].nbrs.size();
        if (deg == 1) return "BV";
        if (deg >= 3) return "BF";
        return unit(rng) < 0.45 ? "BV" : "PN";
    };
    for (int i = 0; i < n_main; ++i) ids[i] = make_rp_id(i, label(i));

    if (cfg.grade_separated_rps > 0) {
        // Disconnected line offset from the main network's centroid.
        Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
        for (const auto& n : nodes) centroid += n.pos;
        centroid /= static_cast<double>(nodes.size());
        const double heading = unit(rng) * 2.0 * std::numbers::pi;
        nodes.push_back({centroid + Eigen::Vector2d(15.0, 15.0), heading, {}});
        const int start = static_cast<int>(nodes.size()) - 1;
        extend(start, heading, cfg.grade_separated_rps - 1);
        ids.resize(nodes.size());
        for (int i = start; i < static_cast<int>(nodes.size()); ++i) {
            ids[i] = make_rp_id(i, label(i));
            net.grade_separated.push_back(ids[i]);
        }
        std::sort(net.grade_separated.begin(), net.grade_separated.end());
    }
    ids.resize(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (ids[i].empty()) ids[i] = make_rp_id(static_cast<int>(i), label(static_cast<int>(i)));
        net.graph.add_node(ids[i]);
        net.positions[ids[i]] = nodes[i].pos;
    }
    for (const auto& [a, b, minutes] : edges) {
        net.graph.set_edge(ids[a], ids[b], {static_cast<double>(minutes), 1});
    }
    return net;
}

json to_json(const SimNetwork& net) {
    json j = graph_to_json(net.graph);
    json pos = json::object();
    for (const auto& [id, p] : net.positions) pos[id] = {p.x(), p.y()};
    j["positions"] = pos;
    j["grade_separated"] = net.grade_separated;
    return j;
}

SimNetwork network_from_json(const json& j) {
    SimNetwork net;
    net.graph = graph_from_json(j);
    try {
        if (j.contains("positions")) {
            for (const auto& [id, p] : j.at("positions").items()) {
                net.positions[id] = Eigen::Vector2d(p.at(0).get<double>(), p.at(1).get<double>());
            }
        }
        if (j.contains("grade_separated")) {
            net.grade_separated = j.at("grade_separated").get<std::vector<std::string>>();
        }
    } catch (const json::exception& ex) {
        throw DataError(std::string("network JSON: ") + ex.what());
    }
    return net;
}

// ---------------------------------------------------------------------------
// Plan

std::vector<std::string> TrainService::rp_sequence() const {
    std::vector<std::string> seq;
    for (const auto& e : itinerary) {
        if (seq.empty() || seq.back() != e.rp) seq.push_back(e.rp);
    }
    return seq;
}

const TrainService* CirculationPlan::find(std::int64_t train_number) const {
    for (const auto& s : services) {
        if (s.train_number == train_number) return &s;
    }
    return nullptr;
}

std::vector<const TrainService*> CirculationPlan::running_on(std::int64_t day) const {
    const bool weekend = day_of_week(day) >= 5;
    std::vector<const TrainService*> out;
    for (const auto& s : services) {
        if (!(weekend && s.weekdays_only)) out.push_back(&s);
    }
    return out;
}

namespace {

double scheduled_minutes(const SimNetwork& net, const std::map<NetworkGraph::EdgeKey, double>& bias,
                         const std::string& a, const std::string& b) {
    const double nominal = net.graph.edge(a, b)->median_minutes;
    const auto it = bias.find(NetworkGraph::edge_key(a, b));
    const double delta = it == bias.end() ? 0.0 : it->second;
    return std::max(nominal - delta, 1.0);
}

std::vector<ItineraryEntry> build_itinerary(const SimNetwork& net,
                                            const std::map<NetworkGraph::EdgeKey, double>& bias,
                                            const std::vector<std::string>& path, TrainCategory category,
                                            bool skip_alternate, double dwell) {
    std::vector<ItineraryEntry> it;
    double offset = 0.0;
    int station_count = 0;
    for (std::size_t j = 0; j < path.size(); ++j) {
        const int rank = 1 + 10 * static_cast<int>(j);
        if (j > 0) offset += scheduled_minutes(net, bias, path[j - 1], path[j]);
        if (j == 0) {
            it.push_back({path[j], ObsType::O, offset, rank});
        } else if (j + 1 == path.size()) {
            it.push_back({path[j], ObsType::T, offset, rank});
        } else {
            bool stop = is_passenger(category) && rp_kind(path[j]) == RpKind::station;
            if (stop && skip_alternate) stop = (station_count++ % 2) == 0;
            if (stop) {
                it.push_back({path[j], ObsType::A, offset, rank});
                offset += dwell;
                it.push_back({path[j], ObsType::D, offset, rank});
            } else {
                it.push_back({path[j], ObsType::P, offset, rank});
            }
        }
    }
    return it;
}

}  // namespace

namespace {

// Shifts departures (whole minutes, later only) so that the plan itself
// respects headways on every directed edge, platform capacities and
// turnaround minimums.
void deconflict(CirculationPlan& plan, const SimConfig& cfg) {
    std::vector<std::size_t> order(plan.services.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& sa = plan.services[a];
        const auto& sb = plan.services[b];
        if (sa.departure_minute != sb.departure_minute) return sa.departure_minute < sb.departure_minute;
        return sa.train_number < sb.train_number;
    });
    std::map<std::int64_t, const TurnaroundPair*> up_of;
    for (const auto& t : plan.turnarounds) up_of[t.down] = &t;
    std::map<std::pair<std::string, std::string>, std::vector<double>> entries;
    std::map<std::string, std::vector<std::pair<double, double>>> platforms;
    std::map<std::int64_t, double> arrival;  // placed terminus times, minutes
    const double h = cfg.headway_minutes;

    for (const std::size_t idx : order) {
        TrainService& svc = plan.services[idx];
        const auto& it = svc.itinerary;
        double base = svc.departure_minute;
        if (const auto u = up_of.find(svc.train_number); u != up_of.end()) {
            if (const auto a = arrival.find(u->second->up); a != arrival.end()) {
                base = std::max(base, std::ceil(a->second + u->second->min_turnaround_minutes));
            }
        }
        auto fits = [&](double dep) {
            for (std::size_t k = 0; k + 1 < it.size(); ++k) {
                if (it[k].rp == it[k + 1].rp) continue;
                const auto e = entries.find({it[k].rp, it[k + 1].rp});
                if (e == entries.end()) continue;
                for (const double t : e->second) {
                    if (std::abs(t - (dep + it[k].offset_minutes)) < h) return false;
                }
            }
            for (std::size_t k = 0; k + 1 < it.size(); ++k) {
                if (it[k].type != ObsType::A) continue;
                const double a = dep + it[k].offset_minutes;
                const double d = dep + it[k + 1].offset_minutes;
                const auto pc = cfg.platform_counts.find(it[k].rp);
                const int capacity = pc == cfg.platform_counts.end() ? cfg.default_platforms : pc->second;
                int overlapping = 0;
                for (const auto& [pa, pd] : platforms[it[k].rp]) {
                    if (pa <= d + 1.0 && a <= pd + 1.0) ++overlapping;
                }
                if (overlapping >= capacity) return false;
            }
            return true;
        };
        double dep = base;
        for (int shift = 0; shift <= 180; ++shift) {
            if (fits(base + shift)) {
                dep = base + shift;
                break;
            }
        }
        svc.departure_minute = dep;
        for (std::size_t k = 0; k + 1 < it.size(); ++k) {
            if (it[k].rp != it[k + 1].rp) entries[{it[k].rp, it[k + 1].rp}].push_back(dep + it[k].offset_minutes);
            if (it[k].type == ObsType::A) {
                platforms[it[k].rp].push_back({dep + it[k].offset_minutes, dep + it[k + 1].offset_minutes});
            }
        }
        arrival[svc.train_number] = dep + it.back().offset_minutes;
    }
}

}  // namespace

CirculationPlan generate_plan(const SimNetwork& net, const SimConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x706c616e));
    CirculationPlan plan;

    // Plan biases: configured edges plus randomly drawn ones.
    std::map<NetworkGraph::EdgeKey, double> bias;
    for (const auto& b : cfg.plan_bias_edges) {
        if (!net.graph.has_edge(b.a, b.b)) throw ConfigError("plan bias on unknown edge " + b.a + "-" + b.b);
        bias[NetworkGraph::edge_key(b.a, b.b)] += b.minutes;
    }

    // Candidate routes between terminals of each component.
    const auto components = connected_components(net.graph);
    std::vector<std::vector<std::string>> main_routes;
    std::vector<std::vector<std::string>> extra_routes;
    for (const auto& comp : components) {
        std::vector<std::string> terminals;
        for (const auto& id : comp) {
            if (net.graph.degree(*net.graph.index_of(id)) == 1) terminals.push_back(id);
        }
        std::vector<std::vector<std::string>> routes;
        for (std::size_t a = 0; a < terminals.size(); ++a) {
            for (std::size_t b = a + 1; b < terminals.size(); ++b) {
                const auto p = shortest_path(net.graph, terminals[a], terminals[b]);
                if (p && p->hops >= 2) routes.push_back(p->path);
            }
        }
        const bool is_grade_separated = !net.grade_separated.empty() && comp.front() == net.grade_separated.front();
        auto& target = is_grade_separated ? extra_routes : main_routes;
        target.insert(target.end(), routes.begin(), routes.end());
    }
    std::shuffle(main_routes.begin(), main_routes.end(), rng);
    std::vector<std::vector<std::string>> routes;
    const int n_main_routes = std::max(1, cfg.n_routes - (extra_routes.empty() ? 0 : 1));
    for (int r = 0; r < n_main_routes && r < static_cast<int>(main_routes.size()); ++r) routes.push_back(main_routes[r]);
    if (!extra_routes.empty()) routes.push_back(extra_routes.front());
    if (routes.empty()) throw ConfigError("network has no usable routes");

    if (cfg.auto_bias_edges > 0) {
        std::set<NetworkGraph::EdgeKey> used;
        for (const auto& path : routes) {
            for (std::size_t j = 1; j < path.size(); ++j) used.insert(NetworkGraph::edge_key(path[j - 1], path[j]));
        }
        std::vector<NetworkGraph::EdgeKey> pool(used.begin(), used.end());
        std::shuffle(pool.begin(), pool.end(), rng);
        std::uniform_int_distribution<int> amount(2, 4);
        for (int k = 0; k < cfg.auto_bias_edges && k < static_cast<int>(pool.size()); ++k) {
            bias[pool[k]] += amount(rng);
        }
    }
    for (const auto& [key, minutes] : bias) plan.biases.push_back({key.first, key.second, minutes});

    const int n_routes = static_cast<int>(routes.size());
    const int n_freight = static_cast<int>(std::lround(cfg.freight_fraction * n_routes));
    std::uniform_int_distribution<int> jitter(0, 10);
    std::uniform_int_distribution<int> slack(5, 15);
    int remaining = cfg.n_trains_per_day;
    int passenger_index = 0;
    for (int r = 0; r < n_routes; ++r) {
        const bool freight = r >= n_routes - n_freight && r < n_routes;
        TrainCategory category = TrainCategory::freight;
        std::int64_t base = 40000 + 200 * r;
        if (!freight) {
            if (passenger_index++ % 2 == 0) {
                category = TrainCategory::high_speed;
                base = 6900 + 100 * r;
            } else {
                category = TrainCategory::regional;
                base = 860000 + 200 * r;
            }
        }
        const int trains = remaining / (n_routes - r);
        remaining -= trains;
        const int pairs = (trains + 1) / 2;
        const auto& path = routes[r];
        std::vector<std::string> reversed(path.rbegin(), path.rend());
        const auto up_it = build_itinerary(net, bias, path, category, category == TrainCategory::high_speed, cfg.dwell_minutes);
        const auto down_it = build_itinerary(net, bias, reversed, category, category == TrainCategory::high_speed, cfg.dwell_minutes);
        const double up_len = up_it.back().offset_minutes;
        const double down_len = down_it.back().offset_minutes;
        const bool turnaround = cfg.auto_turnarounds && !freight;
        const double cycle = up_len + cfg.auto_turnaround_minutes + 15.0 + down_len;
        const double first = 6 * 60.0;
        const double last_up = std::max(first, 23 * 60.0 - (turnaround ? cycle : up_len));
        for (int i = 0; i < pairs; ++i) {
            const double up_dep =
                std::floor(first + (last_up - first) * (i + 0.5) / pairs) + jitter(rng) - 5.0;
            TrainService up{base + 2 * i, category, up_it, std::clamp(up_dep, first, 23 * 60.0), false};
            plan.services.push_back(up);
            if (2 * i + 1 >= trains) break;
            double down_dep = 0.0;
            if (turnaround) {
                down_dep = std::ceil(up.departure_minute + up_len + cfg.auto_turnaround_minutes + slack(rng));
                plan.turnarounds.push_back({up.train_number, up.train_number + 1, cfg.auto_turnaround_minutes});
            } else {
                down_dep = std::floor(first + (23 * 60.0 - down_len - first) * (i + 0.25) / pairs) + jitter(rng);
            }
            plan.services.push_back({base + 2 * i + 1, category, down_it, std::clamp(down_dep, first, 23 * 60.0), false});
        }
    }
    for (const auto& t : cfg.turnaround_pairs) {
        if (plan.find(t.up) && plan.find(t.down)) {
            std::erase_if(plan.turnarounds, [&](const TurnaroundPair& p) { return p.down == t.down; });
            plan.turnarounds.push_back(t);
        }
    }
    deconflict(plan, cfg);
    std::sort(plan.services.begin(), plan.services.end(),
              [](const auto& a, const auto& b) { return a.train_number < b.train_number; });
    return plan;
}

json to_json(const CirculationPlan& plan) {
    json services = json::array();
    for (const auto& s : plan.services) {
        json it = json::array();
        for (const auto& e : s.itinerary) it.push_back({e.rp, std::string(1, to_char(e.type)), e.offset_minutes, e.rank});
        services.push_back({{"train_number", s.train_number},
                            {"category", std::string(to_string(s.category))},
                            {"departure_minute", s.departure_minute},
                            {"weekdays_only", s.weekdays_only},
                            {"itinerary", it}});
    }
    json turns = json::array();
    for (const auto& t : plan.turnarounds) turns.push_back({t.up, t.down, t.min_turnaround_minutes});
    json biases = json::array();
    for (const auto& b : plan.biases) biases.push_back({b.a, b.b, b.minutes});
    return {{"services", services}, {"turnarounds", turns}, {"biases", biases}};
}

CirculationPlan plan_from_json(const json& j) {
    CirculationPlan plan;
    try {
        for (const auto& s : j.at("services")) {
            TrainService svc;
            svc.train_number = s.at("train_number").get<std::int64_t>();
            svc.category = category_of(svc.train_number);
            svc.departure_minute = s.at("departure_minute").get<double>();
            svc.weekdays_only = s.value("weekdays_only", false);
            for (const auto& e : s.at("itinerary")) {
                svc.itinerary.push_back({e.at(0).get<std::string>(), obs_type_from_char(e.at(1).get<std::string>().at(0)),
                                         e.at(2).get<double>(), e.at(3).get<int>()});
            }
            plan.services.push_back(std::move(svc));
        }
        for (const auto& t : j.at("turnarounds")) {
            plan.turnarounds.push_back({t.at(0).get<std::int64_t>(), t.at(1).get<std::int64_t>(), t.at(2).get<double>()});
        }
        for (const auto& b : j.value("biases", json::array())) {
            plan.biases.push_back({b.at(0).get<std::string>(), b.at(1).get<std::string>(), b.at(2).get<double>()});
        }
    } catch (const json::exception& ex) {
        throw DataError(std::string("plan JSON: ") + ex.what());
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

struct Run {
    const TrainService* svc = nullptr;
    std::vector<double> sched;   // seconds after midnight
    std::vector<double> actual;
    std::mt19937_64 rng;
    bool finished = false;
    bool waiting_up = false;     // origin blocked on a turnaround predecessor
    double origin_ready = 0.0;
    std::optional<std::size_t> up;  // turnaround predecessor run
    double turnaround_seconds = 0.0;
    std::vector<std::size_t> dependents;
};

enum class ActionKind { arrive, release, timeout };

struct Action {
    double time = 0.0;
    std::uint64_t seq = 0;
    ActionKind kind = ActionKind::arrive;
    std::size_t train = 0;
    std::size_t entry = 0;
    std::string station;
    bool operator>(const Action& o) const { return time != o.time ? time > o.time : seq > o.seq; }
};

struct PendingEntry {
    std::size_t entry = 0;
    double ready = 0.0;
};

// Directed edge: trains enter in planned order, separated by the headway.
struct EdgeState {
    double last_entry = -1e18;
    double last_exit = -1e18;
    std::vector<std::size_t> order;
    std::size_t next = 0;
    std::map<std::size_t, PendingEntry> pending;
};

struct Waiting {
    std::size_t train = 0;
    std::size_t entry = 0;
};

struct StationState {
    int capacity = 1;
    int occupied = 0;
    std::deque<Waiting> queue;
};

}  // namespace

SimDay simulate_day(const SimNetwork& net, const CirculationPlan& plan, const SimConfig& cfg,
                    int day_offset) {
    cfg.validate();
    const std::int64_t day = days_from_civil(
                                 std::stoi(cfg.start_date.substr(0, 4)),
                                 static_cast<unsigned>(std::stoi(cfg.start_date.substr(5, 2))),
                                 static_cast<unsigned>(std::stoi(cfg.start_date.substr(8, 2)))) +
                             day_offset;
    const std::uint64_t day_seed = mix_seed(cfg.seed, 0x64617900ULL + static_cast<std::uint64_t>(day_offset));
    const double headway = cfg.headway_minutes * 60.0;

    std::vector<Run> runs;
    std::map<std::int64_t, std::size_t> by_number;
    for (const TrainService* svc : plan.running_on(day)) {
        Run run;
        run.svc = svc;
        for (const auto& e : svc->itinerary) run.sched.push_back((svc->departure_minute + e.offset_minutes) * 60.0);
        run.actual.assign(svc->itinerary.size(), 0.0);
        run.rng.seed(mix_seed(day_seed, static_cast<std::uint64_t>(svc->train_number)));
        by_number[svc->train_number] = runs.size();
        runs.push_back(std::move(run));
    }
    if (cfg.enforce_turnarounds) {
        for (const auto& t : plan.turnarounds) {
            const auto up = by_number.find(t.up);
            const auto down = by_number.find(t.down);
            if (up == by_number.end() || down == by_number.end()) continue;
            runs[down->second].up = up->second;
            runs[down->second].turnaround_seconds = t.min_turnaround_minutes * 60.0;
            runs[up->second].dependents.push_back(down->second);
        }
    }

    std::priority_queue<Action, std::vector<Action>, std::greater<>> queue;
    std::uint64_t seq = 0;
    auto push_arrive = [&](double time, std::size_t train, std::size_t entry) {
        queue.push({time, seq++, ActionKind::arrive, train, entry, {}});
    };
    std::map<std::pair<std::string, std::string>, EdgeState> edge_state;
    std::map<std::string, StationState> stations;
    auto station = [&](const std::string& rp) -> StationState& {
        auto [it, inserted] = stations.try_emplace(rp);
        if (inserted) {
            const auto pc = cfg.platform_counts.find(rp);
            it->second.capacity = pc == cfg.platform_counts.end() ? cfg.default_platforms : pc->second;
        }
        return it->second;
    };

    SimDay out;
    out.day = day;

    for (std::size_t i = 0; i < runs.size(); ++i) {
        Run& run = runs[i];
        double origin = cfg.origin_delay.sample(run.rng);
        if (const auto inj = cfg.injected_origin_delays.find(run.svc->train_number);
            inj != cfg.injected_origin_delays.end()) {
            origin += inj->second;
        }
        run.origin_ready = run.sched[0] + origin * 60.0;
        push_arrive(run.origin_ready, i, 0);
    }

    if (cfg.enforce_headway) {
        std::map<std::pair<std::string, std::string>, std::vector<std::pair<double, std::size_t>>> planned;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            const auto& it = runs[i].svc->itinerary;
            for (std::size_t k = 0; k + 1 < it.size(); ++k) {
                if (it[k].rp != it[k + 1].rp) planned[{it[k].rp, it[k + 1].rp}].push_back({runs[i].sched[k], i});
            }
        }
        for (auto& [key, list] : planned) {
            std::sort(list.begin(), list.end(), [&](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return runs[a.second].svc->train_number < runs[b.second].svc->train_number;
            });
            auto& es = edge_state[key];
            for (const auto& [t, i] : list) es.order.push_back(i);
        }
    }

    std::function<void(std::size_t, std::size_t, double)> commit;
    auto depart = [&](std::size_t train, std::size_t k, double ready) {
        const auto& it = runs[train].svc->itinerary;
        EdgeState& es = edge_state[{it[k].rp, it[k + 1].rp}];
        if (cfg.enforce_headway && es.order[es.next] != train) {
            es.pending[train] = {k, ready};
            if (cfg.regulation_minutes > 0.0) {
                queue.push({ready + cfg.regulation_minutes * 60.0, seq++, ActionKind::timeout, train, k, {}});
            }
            return;
        }
        commit(train, k, ready);
    };
    // A train held too long behind late predecessors is dispatched ahead of
    // them on this edge and on every later edge it shares with them.
    auto overtake = [&](std::size_t train, std::size_t k, double now) {
        const auto& it = runs[train].svc->itinerary;
        EdgeState& es = edge_state[{it[k].rp, it[k + 1].rp}];
        const auto pos = static_cast<std::size_t>(std::find(es.order.begin(), es.order.end(), train) - es.order.begin());
        const std::set<std::size_t> passed(es.order.begin() + static_cast<std::ptrdiff_t>(es.next),
                                           es.order.begin() + static_cast<std::ptrdiff_t>(pos));
        es.order.erase(es.order.begin() + static_cast<std::ptrdiff_t>(pos));
        es.order.insert(es.order.begin() + static_cast<std::ptrdiff_t>(es.next), train);
        for (std::size_t j = k + 1; j + 1 < it.size(); ++j) {
            if (it[j].rp == it[j + 1].rp) continue;
            EdgeState& later = edge_state[{it[j].rp, it[j + 1].rp}];
            auto self = std::find(later.order.begin() + static_cast<std::ptrdiff_t>(later.next), later.order.end(), train);
            if (self == later.order.end()) continue;
            auto first = std::find_if(later.order.begin() + static_cast<std::ptrdiff_t>(later.next), self,
                                      [&](std::size_t t) { return passed.count(t) > 0; });
            if (first != self) std::rotate(first, self, self + 1);
        }
        es.pending.erase(train);
        commit(train, k, now);
    };
    commit = [&](std::size_t train, std::size_t k, double ready) {
        Run& run = runs[train];
        const auto& it = run.svc->itinerary;
        const std::string& from = it[k].rp;
        const std::string& to = it[k + 1].rp;
        EdgeState& es = edge_state[{from, to}];
        double enter = ready;
        if (cfg.enforce_headway) enter = std::max(enter, es.last_entry + headway);
        es.last_entry = enter;
        run.actual[k] = enter;
        out.edge_entries.push_back({from, to, run.svc->train_number, enter});
        if (it[k].type == ObsType::D && cfg.enforce_platforms) {
            queue.push({enter, seq++, ActionKind::release, train, k, from});
        }
        const double nominal = net.graph.edge(from, to)->median_minutes;
        const double late = std::max(0.0, (enter - run.sched[k]) / 60.0);
        const double recovered = std::min(late, cfg.recovery_fraction * nominal);
        const double run_minutes = nominal - recovered + cfg.segment_delay.sample(run.rng);
        double exit = enter + run_minutes * 60.0;
        if (cfg.enforce_headway) exit = std::max(exit, es.last_exit + headway);
        es.last_exit = exit;
        push_arrive(exit, train, k + 1);
        if (cfg.enforce_headway) {
            ++es.next;
            if (es.next < es.order.size()) {
                const auto p = es.pending.find(es.order[es.next]);
                if (p != es.pending.end()) {
                    const auto [waiting, entry] = *p;
                    es.pending.erase(p);
                    commit(waiting, entry.entry, entry.ready);
                }
            }
        }
    };

    while (!queue.empty()) {
        const Action act = queue.top();
        queue.pop();
        if (act.kind == ActionKind::timeout) {
            const auto& it = runs[act.train].svc->itinerary;
            EdgeState& es = edge_state[{it[act.entry].rp, it[act.entry + 1].rp}];
            const auto p = es.pending.find(act.train);
            if (p != es.pending.end() && p->second.entry == act.entry) overtake(act.train, act.entry, act.time);
            continue;
        }
        if (act.kind == ActionKind::release) {
            StationState& st = station(act.station);
            --st.occupied;
            if (!st.queue.empty()) {
                const Waiting w = st.queue.front();
                st.queue.pop_front();
                ++st.occupied;
                runs[w.train].actual[w.entry] = act.time;
                push_arrive(act.time + cfg.dwell_minutes * 60.0, w.train, w.entry + 1);
            }
            continue;
        }
        Run& run = runs[act.train];
        const std::size_t k = act.entry;
        const ItineraryEntry& e = run.svc->itinerary[k];
        switch (e.type) {
            case ObsType::O: {
                if (run.up) {
                    const Run& up = runs[*run.up];
                    if (!up.finished) {
                        run.waiting_up = true;
                        break;
                    }
                    const double required = up.actual.back() + run.turnaround_seconds;
                    if (required > act.time + 1e-9) {
                        push_arrive(required, act.train, 0);
                        break;
                    }
                }
                depart(act.train, k, std::max(act.time, run.sched[k]));
                break;
            }
            case ObsType::P: depart(act.train, k, act.time); break;
            case ObsType::D: depart(act.train, k, std::max(act.time, run.sched[k])); break;
            case ObsType::A: {
                if (cfg.enforce_platforms) {
                    StationState& st = station(e.rp);
                    if (st.occupied >= st.capacity) {
                        st.queue.push_back({act.train, k});
                        break;
                    }
                    ++st.occupied;
                }
                run.actual[k] = act.time;
                push_arrive(act.time + cfg.dwell_minutes * 60.0, act.train, k + 1);
                break;
            }
            case ObsType::T: {
                run.actual[k] = act.time;
                run.finished = true;
                for (const std::size_t d : run.dependents) {
                    Run& down = runs[d];
                    if (down.waiting_up) {
                        down.waiting_up = false;
                        push_arrive(std::max(down.origin_ready, act.time + down.turnaround_seconds), d, 0);
                    }
                }
                break;
            }
        }
    }
    for (const auto& run : runs) {
        if (!run.finished) {
            throw DataError("simulation deadlock on day offset " + std::to_string(day_offset) +
                            ": train " + std::to_string(run.svc->train_number) + " never reached its terminus");
        }
    }

    const Timestamp base = day_start(day);
    for (const auto& run : runs) {
        Trajectory traj{run.svc->train_number, run.sched, run.actual};
        for (std::size_t k = 0; k < run.actual.size(); ++k) {
            const auto& e = run.svc->itinerary[k];
            const auto t_rel = static_cast<Timestamp>(std::llround(run.actual[k]));
            ObservationEvent ev;
            ev.time = base + t_rel;
            ev.rp = e.rp;
            ev.type = e.type;
            ev.delay = static_cast<int>(std::lround((static_cast<double>(t_rel) - run.sched[k]) / 60.0));
            ev.train_number = run.svc->train_number;
            ev.rank = e.rank;
            out.events.push_back(std::move(ev));
        }
        out.trajectories.push_back(std::move(traj));
    }
    std::sort(out.events.begin(), out.events.end(), [](const auto& a, const auto& b) {
        if (a.time != b.time) return a.time < b.time;
        if (a.train_number != b.train_number) return a.train_number < b.train_number;
        if (*a.rank != *b.rank) return *a.rank < *b.rank;
        return a.type < b.type;
    });
    const std::int64_t id_base = (static_cast<std::int64_t>(day_offset) + 1) * 10'000'000;
    for (std::size_t i = 0; i < out.events.size(); ++i) out.events[i].id = id_base + static_cast<std::int64_t>(i) + 1;
    std::sort(out.edge_entries.begin(), out.edge_entries.end(),
              [](const auto& a, const auto& b) { return a.time < b.time; });
    return out;
}

EventLog inject_noise(const EventLog& clean, const NoiseConfig& noise, std::uint64_t seed,
                      NoiseReport* report) {
    std::mt19937_64 rng(mix_seed(seed, 0x6e6f697365ULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    NoiseReport local;

    EventLog kept;
    for (const auto& ev : clean) {
        if (unit(rng) < noise.drop_prob) {
            ++local.dropped;
            continue;
        }
        kept.push_back(ev);
    }
    // Duplicates copy the uncorrupted row; ids land in a reserved range.
    EventLog dups;
    for (const auto& ev : kept) {
        if (unit(rng) < noise.duplicate_prob) {
            ObservationEvent d = ev;
            d.id += 5'000'000;
            dups.push_back(std::move(d));
            ++local.duplicated;
        }
    }
    // Rank swaps between itinerary neighbours of the same train and day.
    for (const auto& group : group_by_train_day(kept)) {
        for (std::size_t k = 0; k + 1 < group.indices.size(); ++k) {
            auto& a = kept[group.indices[k]];
            auto& b = kept[group.indices[k + 1]];
            if (!a.rank || !b.rank || *a.rank == *b.rank) continue;
            if (unit(rng) < noise.swap_prob) {
                std::swap(a.rank, b.rank);
                ++local.swapped;
                ++k;
            }
        }
    }
    kept.insert(kept.end(), dups.begin(), dups.end());
    sort_canonical(kept);
    if (report) *report = local;
    return kept;
}

CalibrationReport calibration_report(const EventLog& events, const CalibrationBand& band) {
    CalibrationReport r;
    if (events.empty()) return r;
    std::vector<double> delays;
    delays.reserve(events.size());
    std::set<std::int64_t> days;
    std::set<std::pair<std::int64_t, std::int64_t>> trains;
    double sum = 0.0;
    for (const auto& ev : events) {
        delays.push_back(ev.delay);
        sum += ev.delay;
        days.insert(day_index(ev.time));
        trains.insert({day_index(ev.time), ev.train_number});
    }
    const auto n = static_cast<double>(delays.size());
    r.mean = sum / n;
    double sq = 0.0;
    for (const double d : delays) sq += (d - r.mean) * (d - r.mean);
    r.stddev = std::sqrt(sq / n);
    std::sort(delays.begin(), delays.end());
    const std::size_t m = delays.size();
    r.median = m % 2 == 1 ? delays[m / 2] : 0.5 * (delays[m / 2 - 1] + delays[m / 2]);
    r.days = days.size();
    r.events_per_day = n / static_cast<double>(r.days);
    r.trains_per_day = static_cast<double>(trains.size()) / static_cast<double>(r.days);
    r.mean_ok = r.mean >= band.mean_lo && r.mean <= band.mean_hi;
    r.std_ok = r.stddev >= band.std_lo && r.stddev <= band.std_hi;
    r.median_ok = r.median == band.median;
    return r;
}

json to_json(const CalibrationReport& r) {
    return {{"mean", r.mean},
            {"median", r.median},
            {"std", r.stddev},
            {"events_per_day", r.events_per_day},
            {"trains_per_day", r.trains_per_day},
            {"days", r.days},
            {"mean_ok", r.mean_ok},
            {"median_ok", r.median_ok},
            {"std_ok", r.std_ok},
            {"passed", r.passed()}};
}

}  // namespace delayprop::sim
