#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"
#include "delayprop/forecaster.hpp"
#include "delayprop/simgen.hpp"

using namespace delayprop;
using Mat = Eigen::MatrixXd;

namespace {

EmbeddingTable random_table(std::vector<std::string> keys, int dim, std::uint64_t seed) {
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Mat v(static_cast<Eigen::Index>(keys.size()), dim);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n(rng);
    return EmbeddingTable(std::move(keys), std::move(v));
}

struct Fixture {
    sim::SimConfig cfg;
    sim::SimDay day;
    std::vector<Snapshot> snaps;
    EmbeddingTable rps;
    EmbeddingTable trains;

    explicit Fixture(int n_snaps = 20) {
        cfg.seed = 5;
        const auto net = sim::generate_network(cfg);
        const auto plan = sim::generate_plan(net, cfg);
        day = sim::simulate_day(net, plan, cfg, 0);
        std::vector<std::string> rp_keys{kPreDeparture, kPostArrival}, train_keys;
        for (const auto& e : day.events) {
            rp_keys.push_back(e.rp);
            train_keys.push_back(std::to_string(e.train_number));
        }
        rps = random_table(rp_keys, 4, 1);
        trains = random_table(train_keys, 3, 2);
        const auto view = plan_view_from_events(day.events, day.day);
        for (const auto t0 : snapshot_schedule(day.day, 15)) {
            auto s = build_snapshot(day.events, view, t0, {.n_prev = 3, .n_foll = 5});
            if (s.tokens.size() >= 2) snaps.push_back(std::move(s));
            if (static_cast<int>(snaps.size()) == n_snaps) break;
        }
    }
};

ForecastConfig small_config() {
    ForecastConfig c;
    c.d_model = 8;
    c.d_ff = 16;
    c.heads = 2;
    c.depth = 2;
    c.dropout = 0.0;
    c.n_prev = 3;
    c.n_foll = 5;
    c.lr = 3e-3;
    c.batch = 4;
    c.epochs = 10;
    return c;
}

void randomize_output(Forecaster& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.3);
    auto& out = m.output_layer();
    for (Eigen::Index i = 0; i < out.weight.value.size(); ++i) out.weight.value(i) = n(rng);
    for (Eigen::Index i = 0; i < out.bias.value.size(); ++i) out.bias.value(i) = n(rng);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("value transforms: worked examples") {
    CHECK(value_transform(9.0, TransformKind::sqrt) == doctest::Approx(3.0));
    CHECK(value_transform(-4.0, TransformKind::sqrt) == doctest::Approx(-2.0));
    CHECK(value_transform(0.0, TransformKind::sqrt) == 0.0);
    CHECK(value_transform(std::exp(1.0) - 1.0, TransformKind::log) == doctest::Approx(1.0));
    CHECK(value_transform(-(std::exp(2.0) - 1.0), TransformKind::log) == doctest::Approx(-2.0));
    CHECK(value_transform(-7.5, TransformKind::identity) == -7.5);
    CHECK(transform_from_string("log") == TransformKind::log);
    CHECK_THROWS_AS(transform_from_string("cube"), ConfigError);
}

TEST_CASE("value transforms round-trip on 1000 points") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-500.0, 500.0);
    for (const auto kind : {TransformKind::identity, TransformKind::sqrt, TransformKind::log}) {
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const double x = u(rng);
            worst = std::max(worst, std::abs(value_untransform(value_transform(x, kind), kind) - x));
        }
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("predict_delay: clipping and translation examples") {
    const TargetStats id{};
    // predicted -12 with 5 minutes scheduled left clips to -5
    CHECK(predict_delay(-12.0, id, TransformKind::identity, 0.0, 5.0, PredictMode::evaluation) == doctest::Approx(-5.0));
    CHECK(predict_delay(-12.0, id, TransformKind::identity, 0.0, 5.0, PredictMode::training) == doctest::Approx(-12.0));
    CHECK(predict_delay(3.0, id, TransformKind::identity, 0.0, 10.0, PredictMode::evaluation) == doctest::Approx(3.0));
    CHECK(predict_delay(0.0, id, TransformKind::sqrt, 7.0, 20.0, PredictMode::evaluation) == doctest::Approx(7.0));
    const TargetStats scaled{2.0, 4.0};
    CHECK(predict_delay(1.5, scaled, TransformKind::sqrt, 1.0, 60.0, PredictMode::training) ==
          doctest::Approx(4.0 * 2.25 + 2.0 + 1.0));
}

TEST_CASE("training loss: hand batch and fully masked batch") {
    nn::Tape<double> t;
    const auto raw = t.constant(Mat::Zero(2, 2));
    Mat y(2, 2);
    y << 1, -1, 2, 0;
    bool empty = true;
    CHECK(training_loss(raw, y, Mat::Ones(2, 2), &empty).value()(0, 0) == doctest::Approx(1.0));
    CHECK_FALSE(empty);
    CHECK(training_loss(raw, y, Mat::Zero(2, 2), &empty).value()(0, 0) == 0.0);
    CHECK(empty);
}

TEST_CASE("config validation and JSON round trip") {
    ForecastConfig c = small_config();
    c.transform = TransformKind::log;
    const auto back = forecast_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    ForecastConfig bad = c;
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forecaster output shape and zero-init translation equivalence") {
    const Fixture f(6);
    REQUIRE_FALSE(f.snaps.empty());
    Forecaster model(small_config(), f.rps, f.trains);
    model.fit_stats(f.snaps);
    for (const auto& s : f.snaps) {
        const auto x = model.features(s);
        CHECK(x.rows() == static_cast<Eigen::Index>(s.tokens.size()));
        CHECK(x.cols() == model.feature_width());
        const auto p = model.predict(s, PredictMode::training);
        REQUIRE(p.minutes.rows() == x.rows());
        REQUIRE(p.minutes.cols() == 5);
        for (Eigen::Index i = 0; i < p.minutes.rows(); ++i) {
            for (Eigen::Index j = 0; j < 5; ++j) CHECK(p.minutes(i, j) == s.tokens[static_cast<std::size_t>(i)].translation_delay);
        }
    }
}

TEST_CASE("forward rejects a mismatched feature width") {
    const Fixture f(1);
    Forecaster model(small_config(), f.rps, f.trains);
    nn::Tape<double> t;
    std::mt19937_64 rng(0);
    CHECK_THROWS_AS(model.forward(t, Mat::Zero(2, model.feature_width() + 1), rng, false), DataError);
}

TEST_CASE("forecaster is permutation-equivariant over trains") {
    const Fixture f(4);
    Forecaster model(small_config(), f.rps, f.trains);
    model.fit_stats(f.snaps);
    randomize_output(model, 3);
    const auto& s = f.snaps.back();
    Snapshot r = s;
    std::reverse(r.tokens.begin(), r.tokens.end());
    const auto a = model.predict(s, PredictMode::evaluation).raw;
    const auto b = model.predict(r, PredictMode::evaluation).raw;
    const auto n = a.rows();
    for (Eigen::Index i = 0; i < n; ++i) CHECK((a.row(i) - b.row(n - 1 - i)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("evaluation predictions never imply arrival before now") {
    const Fixture f(8);
    Forecaster model(small_config(), f.rps, f.trains);
    model.fit_stats(f.snaps);
    randomize_output(model, 9);
    model.output_layer().bias.value.array() -= 30.0;
    for (const auto& s : f.snaps) {
        const auto p = model.predict(s, PredictMode::evaluation);
        for (Eigen::Index i = 0; i < p.minutes.size(); ++i) CHECK(p.minutes(i) + p.scheduled(i) >= -1e-9);
    }
}

TEST_CASE("full-model gradient check") {
    const Fixture f(3);
    auto cfg = small_config();
    cfg.d_model = 4;
    cfg.d_ff = 6;
    cfg.depth = 1;
    Forecaster model(cfg, f.rps, f.trains);
    model.fit_stats(f.snaps);
    randomize_output(model, 4);
    const auto& s = f.snaps.back();
    const Mat x = model.features(s);
    Mat y, mask;
    model.targets(s, y, mask);
    REQUIRE(mask.sum() > 0);
    std::mt19937_64 rng(0);
    const double err = nn::grad_check_params(
        [&](nn::Tape<double>& t) { return training_loss(model.forward(t, x, rng, false), y, mask); }, model.parameters());
    CHECK(err < 1e-4);
}

TEST_CASE("training reduces the loss without sustained increases") {
    const Fixture f(50);
    REQUIRE(f.snaps.size() == 50);
    auto cfg = small_config();
    cfg.epochs = 12;
    Forecaster model(cfg, f.rps, f.trains);
    const auto result = fit(model, f.snaps);
    REQUIRE(result.curve.size() == 12);
    double best = result.curve.front().train_loss;
    for (const auto& e : result.curve) {
        CHECK(std::isfinite(e.train_loss));
        CHECK(e.train_loss <= 1.05 * best);
        best = std::min(best, e.train_loss);
    }
    CHECK(result.curve.back().train_loss < result.curve.front().train_loss);
}

TEST_CASE("fit is deterministic for a fixed seed") {
    const Fixture f(10);
    auto cfg = small_config();
    cfg.epochs = 3;
    cfg.dropout = 0.1;
    Forecaster a(cfg, f.rps, f.trains), b(cfg, f.rps, f.trains);
    const auto ra = fit(a, f.snaps);
    const auto rb = fit(b, f.snaps);
    for (std::size_t e = 0; e < ra.curve.size(); ++e) CHECK(ra.curve[e].train_loss == rb.curve[e].train_loss);
}

TEST_CASE("checkpoint round trip is bit-identical") {
    const Fixture f(6);
    auto cfg = small_config();
    cfg.epochs = 2;
    Forecaster model(cfg, f.rps, f.trains);
    fit(model, f.snaps);
    const auto dir = std::filesystem::temp_directory_path() / "delayprop_forecaster_test";
    std::filesystem::create_directories(dir);
    const auto p1 = (dir / "a.ckpt").string();
    const auto p2 = (dir / "b.ckpt").string();
    model.save(p1);
    auto loaded = Forecaster::load(p1);
    loaded.save(p2);
    CHECK(slurp(p1) == slurp(p2));
    for (const auto& s : f.snaps) {
        CHECK(model.predict(s, PredictMode::evaluation).minutes == loaded.predict(s, PredictMode::evaluation).minutes);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("attention maps are row-stochastic and sized by trains") {
    const Fixture f(4);
    Forecaster model(small_config(), f.rps, f.trains);
    model.fit_stats(f.snaps);
    AttentionSnapshot att;
    const auto& s = f.snaps.back();
    model.predict(s, PredictMode::evaluation, &att);
    REQUIRE(att.heads.size() == 2);
    CHECK(att.trains.size() == s.tokens.size());
    for (const auto& h : att.heads) {
        REQUIRE(h.rows() == static_cast<Eigen::Index>(s.tokens.size()));
        for (Eigen::Index i = 0; i < h.rows(); ++i) CHECK(h.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto j = to_json(att);
    CHECK(j.at("heads").size() == 2);
}

TEST_CASE("unknown train numbers embed as zero") {
    const Fixture f(2);
    Forecaster model(small_config(), f.rps, EmbeddingTable({"1"}, Mat::Ones(1, 3)));
    model.fit_stats(f.snaps);
    const auto x = model.features(f.snaps.front());
    CHECK(x.leftCols(3).cwiseAbs().maxCoeff() == 0.0);
}
