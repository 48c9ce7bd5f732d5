#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"
#include "delayprop/railgraph.hpp"
#include "delayprop/simgen.hpp"
#include "oracles.hpp"

using namespace delayprop;

namespace {

const Timestamp kMorning = parse_timestamp("2018-01-08 08:00:00");

// One train passing the given RPs at the given theoretical minute offsets.
EventLog train_run(std::int64_t train, const std::vector<std::string>& rps, const std::vector<double>& minutes,
                   int delay = 0, Timestamp start = kMorning) {
    EventLog log;
    for (std::size_t i = 0; i < rps.size(); ++i) {
        ObservationEvent ev;
        ev.id = train * 100 + static_cast<std::int64_t>(i);
        ev.time = start + static_cast<Timestamp>(minutes[i] * 60) + delay * 60;
        ev.rp = rps[i];
        ev.type = i == 0 ? ObsType::O : (i + 1 == rps.size() ? ObsType::T : ObsType::P);
        ev.delay = delay;
        ev.train_number = train;
        ev.rank = 1 + 10 * static_cast<int>(i);
        log.push_back(ev);
    }
    return log;
}

NetworkGraph random_graph(std::mt19937_64& rng, int n, int extra_edges) {
    NetworkGraph g;
    std::uniform_int_distribution<int> w(1, 6);
    auto id = [](int i) { return std::string(1, static_cast<char>('a' + i)); };
    for (int i = 0; i < n; ++i) g.add_node(id(i));
    // random spanning-ish structure plus chords; integer weights create ties
    for (int i = 1; i < n; ++i) {
        if (rng() % 5 == 0) continue;  // leave some pieces disconnected
        const int j = static_cast<int>(rng() % static_cast<unsigned>(i));
        g.set_edge(id(i), id(j), {static_cast<double>(w(rng)), 1});
    }
    for (int k = 0; k < extra_edges; ++k) {
        const int a = static_cast<int>(rng() % static_cast<unsigned>(n));
        const int b = static_cast<int>(rng() % static_cast<unsigned>(n));
        if (a != b) g.set_edge(id(a), id(b), {static_cast<double>(w(rng)), 1});
    }
    return g;
}

}  // namespace

TEST_CASE("rp ids and kinds") {
    CHECK(is_valid_rp_id("681247BV"));
    CHECK(is_valid_rp_id("11320933"));
    CHECK_FALSE(is_valid_rp_id("68124BV"));
    CHECK_FALSE(is_valid_rp_id("68a247BV"));
    CHECK(rp_kind("681247BV") == RpKind::station);
    CHECK(rp_kind("681247BF") == RpKind::bifurcation);
    CHECK(rp_kind("715938WS") == RpKind::other);
}

TEST_CASE("build_graph: single traversal gives single-sample median") {
    const auto g = build_graph(train_run(10, {"A", "B"}, {0, 7}));
    REQUIRE(g.has_edge("A", "B"));
    CHECK(g.edge("B", "A")->median_minutes == 7.0);
    CHECK(g.edge("A", "B")->sample_count == 1);
}

TEST_CASE("build_graph: odd-count median over traversals") {
    EventLog log;
    const std::vector<double> gaps{6, 7, 30};
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        auto run = train_run(10 + static_cast<std::int64_t>(i), {"A", "B"}, {0, gaps[i]}, static_cast<int>(i) * 4);
        log.insert(log.end(), run.begin(), run.end());
    }
    const auto g = build_graph(log);
    CHECK(g.edge("A", "B")->median_minutes == 7.0);
    CHECK(g.edge("A", "B")->sample_count == 3);
}

TEST_CASE("build_graph: uses theoretical times and skips arrival/departure pairs") {
    EventLog log = train_run(10, {"A", "B", "C"}, {0, 5, 12});
    // delayed observation at C: observed +4 but theoretical gap stays 7
    log[2].time += 4 * 60;
    log[2].delay = 4;
    ObservationEvent dep = log[1];
    dep.type = ObsType::D;
    dep.id = 999;
    dep.time += 60;
    log[1].type = ObsType::A;
    log.insert(log.begin() + 2, dep);
    log[3].time += 60;  // schedule shifts by the dwell
    GraphBuildReport report;
    const auto g = build_graph(log, {}, &report);
    CHECK(g.edge_count() == 2);
    CHECK(g.edge("B", "C")->median_minutes == 7.0);
    CHECK(report.traversals == 2);
}

TEST_CASE("build_graph: negative traversal durations are discarded and counted") {
    EventLog log = train_run(10, {"A", "B"}, {0, 7});
    log[1].delay = 20;  // theoretical time lands before the origin
    GraphBuildReport report;
    const auto g = build_graph(log, {}, &report);
    CHECK_FALSE(g.has_edge("A", "B"));
    CHECK(report.negative_durations == 1);
    CHECK(g.node_count() == 2);
}

TEST_CASE("build_graph: empty input yields an empty graph") {
    const auto g = build_graph({});
    CHECK(g.node_count() == 0);
    CHECK(g.edge_count() == 0);
}

TEST_CASE("build_graph: optional pruning of rarely observed edges") {
    EventLog log = train_run(10, {"A", "B", "C"}, {0, 5, 12});
    auto again = train_run(12, {"A", "B"}, {0, 5}, 0, kMorning + 3600);
    log.insert(log.end(), again.begin(), again.end());
    GraphBuildReport report;
    const auto g = build_graph(log, {.min_samples = 2}, &report);
    CHECK(g.has_edge("A", "B"));
    CHECK_FALSE(g.has_edge("B", "C"));
    CHECK(report.pruned_edges == 1);
}

TEST_CASE("build_graph is invariant to event order within a train-day") {
    EventLog log = train_run(10, {"A", "B", "C", "D"}, {0, 3, 9, 14});
    auto other = train_run(11, {"D", "C", "B"}, {0, 5, 11}, 2, kMorning + 600);
    log.insert(log.end(), other.begin(), other.end());
    const auto ref = graph_to_json(build_graph(log));
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::shuffle(log.begin(), log.end(), rng);
        CHECK(graph_to_json(build_graph(log)) == ref);
    }
}

TEST_CASE("build_graph recovers nominal edge times from an undelayed simulated log") {
    sim::SimConfig cfg;
    cfg.seed = 3;
    cfg.origin_delay.p_zero = 1.0;
    cfg.segment_delay.p_zero = 1.0;
    cfg.auto_bias_edges = 0;
    const auto net = sim::generate_network(cfg);
    const auto plan = sim::generate_plan(net, cfg);
    EventLog log;
    for (int d = 0; d < 10; ++d) {
        const auto day = sim::simulate_day(net, plan, cfg, d);
        log.insert(log.end(), day.events.begin(), day.events.end());
    }
    const auto g = build_graph(log);
    REQUIRE(g.edge_count() > 0);
    for (const auto& [key, stats] : g.edges()) {
        const auto* nominal = net.graph.edge(key.first, key.second);
        REQUIRE(nominal != nullptr);
        CHECK(std::abs(stats.median_minutes - nominal->median_minutes) <= 0.5);
    }
}

TEST_CASE("connected_components on small graphs") {
    NetworkGraph g;
    g.set_edge("C", "D", {1, 1});
    g.set_edge("A", "B", {1, 1});
    const auto parts = connected_components(g);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0] == std::vector<std::string>{"A", "B"});
    CHECK(parts[1] == std::vector<std::string>{"C", "D"});

    NetworkGraph tri;
    tri.set_edge("A", "B", {1, 1});
    tri.set_edge("B", "C", {1, 1});
    tri.set_edge("C", "A", {1, 1});
    CHECK(connected_components(tri).size() == 1);
}

TEST_CASE("connected_components: disjoint cover on random graphs") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const auto g = random_graph(rng, 15, 4);
        std::set<std::string> seen;
        std::size_t total = 0;
        for (const auto& part : connected_components(g)) {
            total += part.size();
            seen.insert(part.begin(), part.end());
            // every edge stays inside one part
            for (const auto& id : part) {
                for (const std::size_t n : g.neighbours(*g.index_of(id))) {
                    CHECK(std::find(part.begin(), part.end(), g.nodes()[n]) != part.end());
                }
            }
        }
        CHECK(total == g.node_count());
        CHECK(seen.size() == g.node_count());
    }
}

TEST_CASE("simulated network with a grade-separated line has two components") {
    sim::SimConfig cfg;
    cfg.seed = 5;
    cfg.grade_separated_rps = 6;
    const auto net = sim::generate_network(cfg);
    const auto parts = connected_components(net.graph);
    REQUIRE(parts.size() == 2);
    const bool matches = parts[0] == net.grade_separated || parts[1] == net.grade_separated;
    CHECK(matches);
}

TEST_CASE("shortest_path basics") {
    NetworkGraph g;
    g.set_edge("A", "B", {7, 1});
    g.add_node("Z");
    const auto self = shortest_path(g, "A", "A");
    REQUIRE(self);
    CHECK(self->minutes == 0.0);
    CHECK(self->hops == 0);
    const auto ab = shortest_path(g, "A", "B");
    REQUIRE(ab);
    CHECK(ab->minutes == 7.0);
    CHECK(ab->hops == 1);
    CHECK_FALSE(shortest_path(g, "A", "Z").has_value());
    CHECK_THROWS_AS(shortest_path(g, "A", "nope"), DataError);
}

TEST_CASE("shortest_path tie-breaking: fewer hops, then lexicographic path") {
    NetworkGraph g;
    g.set_edge("A", "D", {4, 1});
    g.set_edge("A", "B", {2, 1});
    g.set_edge("B", "D", {2, 1});
    g.set_edge("A", "C", {2, 1});
    g.set_edge("C", "D", {2, 1});
    const auto direct = shortest_path(g, "A", "D");
    REQUIRE(direct);
    CHECK(direct->path == std::vector<std::string>{"A", "D"});

    NetworkGraph h;
    h.set_edge("A", "C", {2, 1});
    h.set_edge("C", "D", {2, 1});
    h.set_edge("A", "B", {2, 1});
    h.set_edge("B", "D", {2, 1});
    const auto lex = shortest_path(h, "A", "D");
    REQUIRE(lex);
    CHECK(lex->path == std::vector<std::string>{"A", "B", "D"});
}

TEST_CASE("shortest_path matches exhaustive simple-path enumeration on random 20-node graphs") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 25; ++trial) {
        const auto g = random_graph(rng, 20, 8);
        for (int q = 0; q < 8; ++q) {
            const auto& a = g.nodes()[rng() % g.node_count()];
            const auto& b = g.nodes()[rng() % g.node_count()];
            const auto got = shortest_path(g, a, b);
            const auto want = oracle::best_simple_path(g, a, b);
            REQUIRE(got.has_value() == want.has_value());
            if (!got) continue;
            CHECK(got->minutes == doctest::Approx(want->minutes));
            CHECK(got->hops + 1 == want->nodes.size());
            CHECK(got->path == want->nodes);
        }
    }
}

TEST_CASE("shortest_path minutes satisfy the triangle inequality") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 15; ++trial) {
        const auto g = random_graph(rng, 12, 6);
        for (const auto& a : g.nodes()) {
            const auto from_a = shortest_paths_from(g, a);
            for (std::size_t bi = 0; bi < g.node_count(); ++bi) {
                if (!from_a[bi]) continue;
                const auto from_b = shortest_paths_from(g, g.nodes()[bi]);
                for (std::size_t ci = 0; ci < g.node_count(); ++ci) {
                    if (!from_b[ci]) continue;
                    REQUIRE(from_a[ci].has_value());
                    CHECK(from_a[ci]->minutes <= from_a[bi]->minutes + from_b[ci]->minutes + 1e-9);
                }
            }
        }
    }
}

TEST_CASE("graph JSON layout") {
    NetworkGraph g;
    g.set_edge("110000BV", "110137PN", {7.5, 3});
    const auto j = graph_to_json(g);
    CHECK(j.at("edges").at(0) == nlohmann::json::array({"110000BV", "110137PN", 7.5, 3}));
    const auto back = graph_from_json(j);
    CHECK(graph_to_json(back) == j);
    CHECK_THROWS_AS(graph_from_json(nlohmann::json::parse(R"({"nodes":["A"],"edges":[["A","B",1,1]]})")), DataError);
}
