#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "delayprop/baselines.hpp"
#include "delayprop/errors.hpp"
#include "delayprop/simgen.hpp"

using namespace delayprop;
using namespace delayprop::baselines;

namespace {

ObservationEvent ev(std::int64_t id, const std::string& time, const char* rp, ObsType type, int delay,
                    std::int64_t train) {
    return {id, parse_timestamp(time), rp, type, delay, train, std::nullopt};
}

TrainToken token_with_past(const std::vector<int>& delays, int n_foll = 4) {
    TrainToken t;
    t.train_number = 6900;
    for (std::size_t i = 0; i < delays.size(); ++i) {
        t.past.push_back({"100000BV", 10.0 * static_cast<double>(delays.size() - i), delays[i], ObsType::P});
    }
    t.translation_delay = delays.empty() ? 0 : delays.back();
    for (int k = 0; k < n_foll; ++k) t.future.push_back({"100001BV", 5.0 * (k + 1), ObsType::P, 0});
    t.targets.assign(static_cast<std::size_t>(n_foll), 0.0);
    t.target_mask.assign(static_cast<std::size_t>(n_foll), 0);
    return t;
}

// a(07:00) -> b(07:10) -> c(07:20), one train; weights set by hand
BayesNet three_node_net() {
    BayesNet net;
    net.nodes = {{1, "100000BV", 7 * 3600.0}, {1, "100001PN", 7 * 3600.0 + 600}, {1, "100002BV", 7 * 3600.0 + 1200}};
    net.parents = {{}, {{0, 0.5}}, {{0, 0.25}, {1, 2.0}}};
    net.bias = {3.0, 1.0, -2.0};
    net.underdetermined = {0, 0, 0};
    return net;
}

}  // namespace

TEST_CASE("translation: last measured delay everywhere") {
    for (const double v : translation_predict(token_with_past({111}))) CHECK(v == 111.0);
    for (const double v : translation_predict(token_with_past({}))) CHECK(v == 0.0);
    for (const double v : translation_predict(token_with_past({3, 7, 4}))) CHECK(v == 4.0);
}

TEST_CASE("translation matches an independent last-value oracle on simulated snapshots") {
    sim::SimConfig cfg;
    cfg.seed = 8;
    const auto net = sim::generate_network(cfg);
    const auto day = sim::simulate_day(net, sim::generate_plan(net, cfg), cfg, 0);
    const auto view = plan_view_from_events(day.events, day.day);
    std::size_t checked = 0;
    for (const auto t0 : snapshot_schedule(day.day, 60)) {
        const auto snap = build_snapshot(day.events, view, t0);
        const auto pred = translation_snapshot(snap);
        for (std::size_t i = 0; i < snap.tokens.size(); ++i) {
            // oracle: latest event of this train at or before t0
            const ObservationEvent* last = nullptr;
            for (const auto& e : day.events) {
                if (e.train_number == snap.tokens[i].train_number && e.time <= t0 && (!last || e.time >= last->time)) last = &e;
            }
            const double expected = last ? last->delay : 0.0;
            for (Eigen::Index j = 0; j < pred.cols(); ++j) CHECK(pred(static_cast<Eigen::Index>(i), j) == expected);
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("AR(2): identity parameters reproduce translation") {
    const Ar2Params p{};
    for (const double v : ar2_predict(p, 7.0, 2.0, 6)) CHECK(v == 7.0);
    Ar2Model model;
    model.per_train[6900] = p;
    Snapshot snap;
    snap.tokens = {token_with_past({3, 7, 4})};
    CHECK(model.predict(snap) == translation_snapshot(snap));
}

TEST_CASE("AR(2): recovers generating parameters") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::uniform_real_distribution<double> start(0.0, 20.0);
    std::vector<std::vector<double>> series;
    for (int s = 0; s < 40; ++s) {
        std::vector<double> e{start(rng), start(rng)};
        for (int n = 2; n < 60; ++n) e.push_back(0.6 * e[n - 1] + 0.3 * e[n - 2] + 1.0 + noise(rng));
        series.push_back(e);
    }
    const auto p = fit_ar2(series);
    CHECK_FALSE(p.fallback);
    CHECK(std::abs(p.alpha - 0.6) <= 0.05);
    CHECK(std::abs(p.beta - 0.3) <= 0.05);
    CHECK(std::abs(p.gamma - 1.0) <= 0.05);
    CHECK(p.residual_variance < 0.01);
}

TEST_CASE("AR(2): constant series satisfies the stationarity identity") {
    const auto p = fit_ar2(std::vector<double>(12, 4.0));
    CHECK(p.gamma == doctest::Approx(4.0 * (1.0 - p.alpha - p.beta)).epsilon(1e-9));
    for (const double v : ar2_predict(p, 4.0, 4.0, 5)) CHECK(v == doctest::Approx(4.0));
}

TEST_CASE("AR(2): short series fall back to translation") {
    CHECK(fit_ar2(std::vector<double>{1.0, 2.0}).fallback);
    Ar2Model model;
    model.per_train[6900] = fit_ar2(std::vector<double>{1.0});
    Snapshot snap;
    snap.tokens = {token_with_past({3, 7, 4})};
    CHECK(model.predict(snap) == translation_snapshot(snap));
    snap.tokens = {token_with_past({9})};
    model.per_train[6900] = Ar2Params{0.5, 0.5, 0.0};
    CHECK(model.predict(snap) == translation_snapshot(snap));
}

TEST_CASE("AR(2) model fits per train and round-trips through JSON") {
    EventLog log;
    std::int64_t id = 1;
    for (int d = 0; d < 3; ++d) {
        const std::string date = "2018-01-1" + std::to_string(d);
        int delay = d;
        for (int k = 0; k < 6; ++k) {
            log.push_back(ev(id++, date + " 08:" + std::to_string(10 + k * 5) + ":00", "100000BV", ObsType::P, delay, 6900));
            delay = delay * 2 % 7;
        }
    }
    const auto model = fit_ar2_model(log);
    REQUIRE(model.per_train.count(6900) == 1);
    CHECK(model.per_train.at(6900).samples == 12);
    const auto back = ar2_model_from_json(to_json(model));
    CHECK(back.per_train.at(6900).alpha == model.per_train.at(6900).alpha);
    CHECK(back.per_train.at(6900).gamma == model.per_train.at(6900).gamma);
}

TEST_CASE("Bayesian graph: predicate examples") {
    EventLog log{ev(1, "2018-01-08 08:00:00", "100000BV", ObsType::D, 0, 6900),
                 ev(2, "2018-01-08 08:10:00", "100001PN", ObsType::P, 0, 6900),
                 ev(3, "2018-01-08 12:00:00", "200000BV", ObsType::D, 0, 860000)};
    const auto net = build_bayes_graph(log);
    REQUIRE(net.nodes.size() == 3);
    const auto a = *net.index_of(6900, "100000BV");
    const auto b = *net.index_of(6900, "100001PN");
    const auto c = *net.index_of(860000, "200000BV");
    auto has = [&](std::size_t from, std::size_t to) {
        for (const auto& [p, w] : net.parents[to]) {
            if (p == from) return true;
        }
        return false;
    };
    CHECK(has(a, b));
    CHECK_FALSE(has(a, c));
    CHECK_FALSE(has(b, c));
    CHECK(net.edge_count() == 1);
}

TEST_CASE("Bayesian graph: hand 5-event day equals a brute-force predicate enumeration") {
    EventLog log{ev(1, "2018-01-08 08:00:00", "100000BV", ObsType::D, 0, 6900),
                 ev(2, "2018-01-08 08:20:00", "100001PN", ObsType::P, 2, 6900),
                 ev(3, "2018-01-08 08:40:00", "100001PN", ObsType::P, 1, 7100),
                 ev(4, "2018-01-08 09:30:00", "100002BV", ObsType::A, 5, 6900),
                 ev(5, "2018-01-08 09:45:00", "300000BV", ObsType::D, 0, 860000)};
    const auto net = build_bayes_graph(log, 30.0);
    // theoretical minutes after midnight per (train, rp) and the expected edges
    struct N {
        std::int64_t train;
        const char* rp;
        double minute;
    };
    const std::vector<N> nodes{{6900, "100000BV", 480},
                               {6900, "100001PN", 498},
                               {7100, "100001PN", 519},
                               {6900, "100002BV", 565},
                               {860000, "300000BV", 585}};
    std::set<std::pair<std::string, std::string>> expected, actual;
    auto name = [](std::int64_t t, const std::string& rp) { return std::to_string(t) + "/" + rp; };
    for (const auto& y : nodes) {
        for (const auto& x : nodes) {
            if (y.minute < x.minute &&
                (y.train == x.train || std::string(y.rp) == x.rp || x.minute - y.minute <= 30.0)) {
                expected.insert({name(y.train, y.rp), name(x.train, x.rp)});
            }
        }
    }
    for (std::size_t x = 0; x < net.nodes.size(); ++x) {
        for (const auto& [y, w] : net.parents[x]) {
            actual.insert({name(net.nodes[y].train_number, net.nodes[y].rp), name(net.nodes[x].train_number, net.nodes[x].rp)});
        }
    }
    CHECK(actual == expected);
    // 6900/100000BV -> 6900/100001PN, -> 6900/100002BV, 6900/100001PN -> 7100/100001PN (rp and window),
    // 6900/100001PN -> 6900/100002BV and 6900/100002BV -> 860000/300000BV (window); 7100 has no successor
    CHECK(expected.size() == 5);
}

TEST_CASE("Bayesian recursion: hand arithmetic on the 3-node fixture") {
    const auto net = three_node_net();
    // L(a)=3, L(b)=1+0.5*3=2.5, L(c)=-2+0.25*3+2*2.5=3.75
    auto l = net.evaluate({});
    CHECK(l[0] == doctest::Approx(3.0));
    CHECK(l[1] == doctest::Approx(2.5));
    CHECK(l[2] == doctest::Approx(3.75));
    // a measured at 10: L(b)=6, L(c)=-2+2.5+12=12.5
    l = net.evaluate({{0, 10.0}});
    CHECK(l[1] == doctest::Approx(6.0));
    CHECK(l[2] == doctest::Approx(12.5));
    // b measured at 4 overrides its recursion
    l = net.evaluate({{0, 10.0}, {1, 4.0}});
    CHECK(l[2] == doctest::Approx(-2.0 + 2.5 + 8.0));
}

TEST_CASE("Bayesian recursion: chain identity and zero propagation") {
    BayesNet chain;
    chain.nodes = {{1, "100000BV", 0}, {1, "100001BV", 60}};
    chain.parents = {{}, {{0, 1.0}}};
    chain.bias = {0.0, 0.0};
    chain.underdetermined = {0, 0};
    CHECK(chain.evaluate({{0, 10.0}})[1] == 10.0);
    auto zero = three_node_net();
    zero.bias = {0.0, 0.0, 0.0};
    for (const double v : zero.evaluate({{0, 0.0}})) CHECK(v == 0.0);
}

TEST_CASE("Bayesian recursion respects topological order") {
    const auto net = three_node_net();
    const auto base = net.evaluate({{0, 1.0}});
    const auto changed = net.evaluate({{0, 1.0}, {2, 99.0}});
    CHECK(base[0] == changed[0]);
    CHECK(base[1] == changed[1]);
}

TEST_CASE("Bayesian fit: parentless node returns its historical mean") {
    EventLog log{ev(1, "2018-01-08 08:00:00", "100000BV", ObsType::D, 2, 6900),
                 ev(2, "2018-01-09 08:00:00", "100000BV", ObsType::D, 4, 6900)};
    auto net = build_bayes_graph(log);
    fit_bayes(net, log);
    REQUIRE(net.nodes.size() == 1);
    CHECK(net.parents[0].empty());
    CHECK(net.bias[0] == doctest::Approx(3.0));
    CHECK(net.evaluate({})[0] == doctest::Approx(3.0));
}

TEST_CASE("Bayesian fit recovers a linear dependence and flags underdetermined nodes") {
    EventLog log;
    std::int64_t id = 1;
    const int xs[] = {0, 3, 1, 7, 4, 2, 9, 5};
    for (int d = 0; d < 8; ++d) {
        const std::string date = "2018-01-" + std::to_string(10 + d);
        log.push_back(ev(id++, date + " 08:00:00", "100000BV", ObsType::D, xs[d], 6900));
        log.push_back(ev(id++, date + " 08:10:00", "100001BV", ObsType::A, 2 * xs[d] + 1, 6900));
    }
    auto net = build_bayes_graph(log);
    fit_bayes(net, log, 1e-9);
    const auto b = *net.index_of(6900, "100001BV");
    REQUIRE(net.parents[b].size() == 1);
    CHECK(net.parents[b][0].second == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(net.bias[b] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_FALSE(net.underdetermined[b]);

    EventLog one(log.begin(), log.begin() + 2);
    one.push_back(ev(100, "2018-01-10 08:05:00", "100005BV", ObsType::P, 1, 7100));
    auto small = build_bayes_graph(one);
    fit_bayes(small, one);
    const auto last = *small.index_of(6900, "100001BV");
    CHECK(small.parents[last].size() == 2);
    CHECK(small.underdetermined[last]);
    for (const auto& [p, w] : small.parents[last]) CHECK(std::isfinite(w));
}

TEST_CASE("Bayesian prediction on snapshots: measured past, unseen fallback, JSON") {
    sim::SimConfig cfg;
    cfg.seed = 12;
    cfg.days = 3;
    const auto net = sim::generate_network(cfg);
    const auto plan = sim::generate_plan(net, cfg);
    EventLog history;
    for (int d = 0; d < 2; ++d) {
        const auto day = sim::simulate_day(net, plan, cfg, d);
        history.insert(history.end(), day.events.begin(), day.events.end());
    }
    auto bn = build_bayes_graph(history);
    fit_bayes(bn, history);
    const auto back = bayes_net_from_json(to_json(bn));
    CHECK(back.edge_count() == bn.edge_count());
    CHECK(back.bias == bn.bias);

    const auto test = sim::simulate_day(net, plan, cfg, 2);
    const auto view = plan_view_from_events(test.events, test.day);
    const auto snap = build_snapshot(test.events, view, test.day * kSecondsPerDay + 12 * 3600);
    REQUIRE_FALSE(snap.tokens.empty());
    const auto pred = bayes_predict(bn, test.events, snap);
    CHECK(pred.minutes.rows() == static_cast<Eigen::Index>(snap.tokens.size()));
    CHECK(pred.minutes.allFinite());
    CHECK(pred.unseen == 0);

    Snapshot stranger = snap;
    stranger.tokens.front().train_number = 999999;
    CHECK(bayes_predict(bn, test.events, stranger).unseen > 0);
}
