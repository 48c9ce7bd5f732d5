#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "delayprop/events.hpp"

namespace delayprop {

/// Remarkable point class, read from the two-character id suffix.
enum class RpKind { station, bifurcation, other };

/// True for six digits followed by two alphanumerics, e.g. "681247BV".
bool is_valid_rp_id(std::string_view id);
RpKind rp_kind(std::string_view id);

struct RemarkablePoint {
    std::string id;
    Eigen::Vector2d position = Eigen::Vector2d::Zero();
    RpKind kind() const { return rp_kind(id); }
};

using RpPositions = std::map<std::string, Eigen::Vector2d>;

struct EdgeStats {
    double median_minutes = 0.0;
    std::size_t sample_count = 0;
};

/// Undirected macro-level RP graph. Edge keys are stored with the smaller id first.
class NetworkGraph {
public:
    using EdgeKey = std::pair<std::string, std::string>;

    static EdgeKey edge_key(std::string_view a, std::string_view b);

    /// Adds a node if absent; returns its index.
    std::size_t add_node(const std::string& id);
    /// Adds or overwrites an undirected edge. Throws ConfigError on self-loops.
    void set_edge(const std::string& a, const std::string& b, EdgeStats stats);

    bool has_node(std::string_view id) const;
    std::optional<std::size_t> index_of(std::string_view id) const;
    bool has_edge(std::string_view a, std::string_view b) const;
    const EdgeStats* edge(std::string_view a, std::string_view b) const;

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t edge_count() const { return edges_.size(); }
    const std::vector<std::string>& nodes() const { return nodes_; }
    const std::map<EdgeKey, EdgeStats>& edges() const { return edges_; }
    /// Neighbour indices of node i, sorted by neighbour id.
    const std::vector<std::size_t>& neighbours(std::size_t i) const { return adjacency_[i]; }
    std::size_t degree(std::size_t i) const { return adjacency_[i].size(); }

private:
    std::vector<std::string> nodes_;
    std::map<std::string, std::size_t, std::less<>> index_;
    std::map<EdgeKey, EdgeStats> edges_;
    std::vector<std::vector<std::size_t>> adjacency_;
};

struct GraphBuildOptions {
    /// Drop edges with fewer samples than this; 0 keeps everything.
    std::size_t min_samples = 0;
};

struct GraphBuildReport {
    std::size_t traversals = 0;
    std::size_t negative_durations = 0;
    std::size_t pruned_edges = 0;
};

/// Infers edges from consecutive observations of the same train on the same
/// day and sets each edge's median traversal time from theoretical times.
NetworkGraph build_graph(const EventLog& events, const GraphBuildOptions& options = {},
                         GraphBuildReport* report = nullptr);

/// Maximal connected subsets, members sorted by id, components sorted by
/// their smallest member.
std::vector<std::vector<std::string>> connected_components(const NetworkGraph& g);

struct PathResult {
    double minutes = 0.0;
    std::size_t hops = 0;
    std::vector<std::string> path;
};

/// Minimum-minutes path; ties go to fewer hops, then the lexicographically
/// smallest id sequence. nullopt when unreachable; DataError for unknown ids.
std::optional<PathResult> shortest_path(const NetworkGraph& g, std::string_view from,
                                        std::string_view to);

/// Single-source variant: entry i holds the path to node i (nullopt when
/// unreachable). Same tie-breaking as shortest_path.
std::vector<std::optional<PathResult>> shortest_paths_from(const NetworkGraph& g,
                                                           std::string_view from);

nlohmann::json graph_to_json(const NetworkGraph& g);
NetworkGraph graph_from_json(const nlohmann::json& j);

}  // namespace delayprop
