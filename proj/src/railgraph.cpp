#include "delayprop/railgraph.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <queue>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"

namespace delayprop {

bool is_valid_rp_id(std::string_view id) {
    if (id.size() != 8) return false;
    for (std::size_t i = 0; i < 6; ++i) {
        if (!std::isdigit(static_cast<unsigned char>(id[i]))) return false;
    }
    return std::isalnum(static_cast<unsigned char>(id[6])) &&
           std::isalnum(static_cast<unsigned char>(id[7]));
}

RpKind rp_kind(std::string_view id) {
    if (id.size() < 2) return RpKind::other;
    const auto suffix = id.substr(id.size() - 2);
    if (suffix == "BV") return RpKind::station;
    if (suffix == "BF") return RpKind::bifurcation;
    return RpKind::other;
}

NetworkGraph::EdgeKey NetworkGraph::edge_key(std::string_view a, std::string_view b) {
    return a < b ? EdgeKey{std::string(a), std::string(b)} : EdgeKey{std::string(b), std::string(a)};
}

std::size_t NetworkGraph::add_node(const std::string& id) {
    if (const auto it = index_.find(id); it != index_.end()) return it->second;
    // Keep nodes_ sorted so indices follow id order.
    const auto pos = std::lower_bound(nodes_.begin(), nodes_.end(), id);
    const auto idx = static_cast<std::size_t>(pos - nodes_.begin());
    nodes_.insert(pos, id);
    adjacency_.emplace(adjacency_.begin() + static_cast<std::ptrdiff_t>(idx));
    for (auto& [name, i] : index_) {
        if (i >= idx) ++i;
    }
    for (auto& adj : adjacency_) {
        for (auto& n : adj) {
            if (n >= idx) ++n;
        }
    }
    index_.emplace(id, idx);
    return idx;
}

void NetworkGraph::set_edge(const std::string& a, const std::string& b, EdgeStats stats) {
    if (a == b) throw ConfigError("self-loop on RP " + a);
    add_node(a);
    add_node(b);
    const auto key = edge_key(a, b);
    if (edges_.find(key) == edges_.end()) {
        const std::size_t ia = index_.find(a)->second;
        const std::size_t ib = index_.find(b)->second;
        auto insert_sorted = [](std::vector<std::size_t>& v, std::size_t x) {
            v.insert(std::lower_bound(v.begin(), v.end(), x), x);
        };
        insert_sorted(adjacency_[ia], ib);
        insert_sorted(adjacency_[ib], ia);
    }
    edges_[key] = stats;
}

bool NetworkGraph::has_node(std::string_view id) const { return index_.find(id) != index_.end(); }

std::optional<std::size_t> NetworkGraph::index_of(std::string_view id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

bool NetworkGraph::has_edge(std::string_view a, std::string_view b) const {
    return edge(a, b) != nullptr;
}

const EdgeStats* NetworkGraph::edge(std::string_view a, std::string_view b) const {
    const auto it = edges_.find(edge_key(a, b));
    return it == edges_.end() ? nullptr : &it->second;
}

namespace {

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

NetworkGraph build_graph(const EventLog& events, const GraphBuildOptions& options,
                         GraphBuildReport* report) {
    GraphBuildReport local;
    std::map<NetworkGraph::EdgeKey, std::vector<double>> samples;
    std::vector<std::string> seen_nodes;
    for (const auto& group : group_by_train_day(events)) {
        for (std::size_t k = 0; k < group.indices.size(); ++k) {
            const auto& cur = events[group.indices[k]];
            seen_nodes.push_back(cur.rp);
            if (k == 0) continue;
            const auto& prev = events[group.indices[k - 1]];
            if (prev.rp == cur.rp) continue;  // arrival/departure pair at one RP
            ++local.traversals;
            const double minutes =
                static_cast<double>(cur.theoretical_time() - prev.theoretical_time()) / 60.0;
            if (minutes < 0.0) {
                ++local.negative_durations;
                continue;
            }
            samples[NetworkGraph::edge_key(prev.rp, cur.rp)].push_back(minutes);
        }
    }

    NetworkGraph g;
    std::sort(seen_nodes.begin(), seen_nodes.end());
    seen_nodes.erase(std::unique(seen_nodes.begin(), seen_nodes.end()), seen_nodes.end());
    for (const auto& id : seen_nodes) g.add_node(id);
    for (auto& [key, values] : samples) {
        if (values.size() < options.min_samples) {
            ++local.pruned_edges;
            continue;
        }
        const std::size_t count = values.size();
        g.set_edge(key.first, key.second, {median(std::move(values)), count});
    }
    if (report) *report = local;
    return g;
}

std::vector<std::vector<std::string>> connected_components(const NetworkGraph& g) {
    const std::size_t n = g.node_count();
    std::vector<bool> visited(n, false);
    std::vector<std::vector<std::string>> components;
    // Node indices follow id order, so scanning in index order yields
    // components already sorted by smallest member.
    for (std::size_t start = 0; start < n; ++start) {
        if (visited[start]) continue;
        std::vector<std::size_t> members;
        std::queue<std::size_t> frontier;
        frontier.push(start);
        visited[start] = true;
        while (!frontier.empty()) {
            const std::size_t u = frontier.front();
            frontier.pop();
            members.push_back(u);
            for (const std::size_t v : g.neighbours(u)) {
                if (!visited[v]) {
                    visited[v] = true;
                    frontier.push(v);
                }
            }
        }
        std::sort(members.begin(), members.end());
        std::vector<std::string> ids;
        ids.reserve(members.size());
        for (const std::size_t m : members) ids.push_back(g.nodes()[m]);
        components.push_back(std::move(ids));
    }
    return components;
}

namespace {

constexpr double kTieEps = 1e-9;

struct Label {
    double minutes = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> path;  // node indices; index order equals id order
    bool reached() const { return !path.empty(); }
};

// Total order on labels: minutes, then hops, then lexicographic path.
bool better(const Label& a, const Label& b) {
    if (!b.reached()) return a.reached();
    if (!a.reached()) return false;
    if (std::abs(a.minutes - b.minutes) > kTieEps) return a.minutes < b.minutes;
    if (a.path.size() != b.path.size()) return a.path.size() < b.path.size();
    return a.path < b.path;
}

std::vector<Label> dijkstra(const NetworkGraph& g, std::size_t source) {
    const std::size_t n = g.node_count();
    std::vector<Label> labels(n);
    std::vector<bool> done(n, false);
    labels[source].minutes = 0.0;
    labels[source].path = {source};
    for (std::size_t iter = 0; iter < n; ++iter) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (!done[i] && labels[i].reached() && (best == n || better(labels[i], labels[best]))) {
                best = i;
            }
        }
        if (best == n) break;
        done[best] = true;
        const auto& from_id = g.nodes()[best];
        for (const std::size_t v : g.neighbours(best)) {
            if (done[v]) continue;
            Label candidate;
            candidate.minutes = labels[best].minutes + g.edge(from_id, g.nodes()[v])->median_minutes;
            candidate.path = labels[best].path;
            candidate.path.push_back(v);
            if (better(candidate, labels[v])) labels[v] = std::move(candidate);
        }
    }
    return labels;
}

PathResult to_result(const NetworkGraph& g, const Label& label) {
    PathResult r;
    r.minutes = label.minutes;
    r.hops = label.path.size() - 1;
    r.path.reserve(label.path.size());
    for (const std::size_t i : label.path) r.path.push_back(g.nodes()[i]);
    return r;
}

std::size_t require_node(const NetworkGraph& g, std::string_view id) {
    const auto idx = g.index_of(id);
    if (!idx) throw DataError("unknown RP id: " + std::string(id));
    return *idx;
}

}  // namespace

std::optional<PathResult> shortest_path(const NetworkGraph& g, std::string_view from,
                                        std::string_view to) {
    const std::size_t s = require_node(g, from);
    const std::size_t t = require_node(g, to);
    const auto labels = dijkstra(g, s);
    if (!labels[t].reached()) return std::nullopt;
    return to_result(g, labels[t]);
}

std::vector<std::optional<PathResult>> shortest_paths_from(const NetworkGraph& g,
                                                           std::string_view from) {
    const auto labels = dijkstra(g, require_node(g, from));
    std::vector<std::optional<PathResult>> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].reached()) out[i] = to_result(g, labels[i]);
    }
    return out;
}

nlohmann::json graph_to_json(const NetworkGraph& g) {
    nlohmann::json j;
    j["nodes"] = g.nodes();
    auto edges = nlohmann::json::array();
    for (const auto& [key, stats] : g.edges()) {
        edges.push_back({key.first, key.second, stats.median_minutes, stats.sample_count});
    }
    j["edges"] = std::move(edges);
    return j;
}

NetworkGraph graph_from_json(const nlohmann::json& j) {
    NetworkGraph g;
    try {
        for (const auto& id : j.at("nodes")) g.add_node(id.get<std::string>());
        for (const auto& e : j.at("edges")) {
            const auto a = e.at(0).get<std::string>();
            const auto b = e.at(1).get<std::string>();
            if (!g.has_node(a) || !g.has_node(b)) {
                throw DataError("graph JSON: edge references unknown node");
            }
            g.set_edge(a, b, {e.at(2).get<double>(), e.at(3).get<std::size_t>()});
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("graph JSON: ") + ex.what());
    }
    return g;
}

}  // namespace delayprop
