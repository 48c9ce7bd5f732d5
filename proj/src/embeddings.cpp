#include "delayprop/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"
#include "delayprop/ingest.hpp"

namespace delayprop {

using nlohmann::json;
using Mat = nn::Matrix<double>;

EmbeddingTable::EmbeddingTable(std::vector<std::string> keys, Eigen::MatrixXd vectors) {
    if (static_cast<Eigen::Index>(keys.size()) != vectors.rows()) throw DataError("embedding table: key/vector count mismatch");
    std::vector<std::size_t> order(keys.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    vectors_.resize(vectors.rows(), vectors.cols());
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && keys[order[i]] == keys[order[i - 1]]) throw DataError("embedding table: duplicate key " + keys[order[i]]);
        keys_.push_back(keys[order[i]]);
        vectors_.row(static_cast<Eigen::Index>(i)) = vectors.row(static_cast<Eigen::Index>(order[i]));
    }
}

std::optional<std::size_t> EmbeddingTable::index_of(std::string_view key) const {
    const auto it = std::lower_bound(keys_.begin(), keys_.end(), key);
    if (it == keys_.end() || *it != key) return std::nullopt;
    return static_cast<std::size_t>(it - keys_.begin());
}

Eigen::RowVectorXd EmbeddingTable::vector(std::string_view key) const {
    const auto i = index_of(key);
    if (!i) throw DataError("unknown embedding key " + std::string(key));
    return vectors_.row(static_cast<Eigen::Index>(*i));
}

json to_json(const EmbeddingTable& table) {
    json vectors = json::object();
    for (std::size_t i = 0; i < table.size(); ++i) {
        const Eigen::RowVectorXd v = table.vectors().row(static_cast<Eigen::Index>(i));
        vectors[table.keys()[i]] = std::vector<double>(v.data(), v.data() + v.size());
    }
    json out{{"dim", table.dim()}, {"vectors", vectors}};
    if (table.norm) {
        const auto& n = *table.norm;
        out["length_norm"] = {{"minutes_mean", n.minutes_mean}, {"minutes_std", n.minutes_std},
                              {"rps_mean", n.rps_mean}, {"rps_std", n.rps_std}};
    }
    return out;
}

EmbeddingTable embedding_table_from_json(const json& j) {
    try {
        const int dim = j.at("dim").get<int>();
        std::vector<std::string> keys;
        Eigen::MatrixXd vectors(static_cast<Eigen::Index>(j.at("vectors").size()), dim);
        Eigen::Index row = 0;
        for (const auto& [key, v] : j.at("vectors").items()) {
            const auto values = v.get<std::vector<double>>();
            if (static_cast<int>(values.size()) != dim) throw DataError("embedding " + key + " has the wrong dimension");
            keys.push_back(key);
            vectors.row(row++) = Eigen::Map<const Eigen::RowVectorXd>(values.data(), dim);
        }
        EmbeddingTable table(std::move(keys), std::move(vectors));
        if (j.contains("length_norm")) {
            const auto& n = j.at("length_norm");
            table.norm = LengthNorm{n.at("minutes_mean").get<double>(), n.at("minutes_std").get<double>(),
                                    n.at("rps_mean").get<double>(), n.at("rps_std").get<double>()};
        }
        return table;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed embedding table: ") + e.what());
    }
}

void save_table_binary(const std::string& path, const EmbeddingTable& table) {
    nn::Parameter<double> p("table", table.vectors());
    json meta = to_json(table);
    meta.erase("vectors");
    meta["keys"] = table.keys();
    nn::save_checkpoint(path, {&p}, meta);
}

EmbeddingTable load_table_binary(const std::string& path) {
    // the header carries the shape, so read it before the data
    json meta = nn::load_checkpoint(path, {});
    const auto keys = meta.at("keys").get<std::vector<std::string>>();
    nn::Parameter<double> p("table", Mat::Zero(static_cast<Eigen::Index>(keys.size()), meta.at("dim").get<int>()));
    nn::load_checkpoint(path, {&p});
    meta["vectors"] = json::object();
    EmbeddingTable table(keys, p.value);
    if (meta.contains("length_norm")) table.norm = embedding_table_from_json(meta).norm;
    return table;
}

std::vector<std::string> rp_vocabulary(const NetworkGraph& g) {
    std::vector<std::string> vocab = g.nodes();
    vocab.emplace_back(kPreDeparture);
    vocab.emplace_back(kPostArrival);
    std::sort(vocab.begin(), vocab.end());
    return vocab;
}

// --- length pre-training ------------------------------------------------------

std::vector<LengthSample> make_length_dataset(const NetworkGraph& g, std::size_t n_samples, std::mt19937_64& rng) {
    std::vector<std::vector<std::string>> comps;
    for (auto& c : connected_components(g)) {
        if (c.size() >= 2) comps.push_back(std::move(c));
    }
    std::vector<std::pair<std::size_t, std::size_t>> pool;  // (component, member)
    for (std::size_t c = 0; c < comps.size(); ++c) {
        for (std::size_t m = 0; m < comps[c].size(); ++m) pool.push_back({c, m});
    }
    std::vector<LengthSample> out;
    if (pool.empty()) return out;
    std::map<std::size_t, std::vector<std::optional<PathResult>>> cache;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    out.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
        const auto [c, m] = pool[pick(rng)];
        std::uniform_int_distribution<std::size_t> other(0, comps[c].size() - 1);
        const std::string& a = comps[c][m];
        const std::string& b = comps[c][other(rng)];
        const std::size_t ia = *g.index_of(a);
        auto it = cache.find(ia);
        if (it == cache.end()) it = cache.emplace(ia, shortest_paths_from(g, a)).first;
        const auto& path = it->second[*g.index_of(b)];
        out.push_back({a, b, path->minutes, static_cast<int>(path->hops) + 1});
    }
    return out;
}

LengthNorm length_norm(const std::vector<LengthSample>& data) {
    LengthNorm n;
    if (data.empty()) return n;
    const double count = static_cast<double>(data.size());
    double sm = 0, sr = 0;
    for (const auto& s : data) {
        sm += s.minutes;
        sr += s.rps;
    }
    n.minutes_mean = sm / count;
    n.rps_mean = sr / count;
    double vm = 0, vr = 0;
    for (const auto& s : data) {
        vm += (s.minutes - n.minutes_mean) * (s.minutes - n.minutes_mean);
        vr += (s.rps - n.rps_mean) * (s.rps - n.rps_mean);
    }
    n.minutes_std = std::max(std::sqrt(vm / count), 1e-9);
    n.rps_std = std::max(std::sqrt(vr / count), 1e-9);
    return n;
}

nn::Var<double> LengthProbe::operator()(nn::Tape<double>& t, nn::Var<double> pairs) {
    return l2(t, act(t, l1(t, pairs)));
}

void LengthProbe::collect(nn::ParamList<double>& out) {
    l1.collect(out);
    act.collect(out);
    l2.collect(out);
}

std::pair<double, double> LengthProbe::predict(const EmbeddingTable& table, std::string_view a, std::string_view b) {
    Mat x(1, 2 * table.dim());
    x << table.vector(a), table.vector(b);
    nn::Tape<double> t;
    const Mat y = (*this)(t, t.constant(x)).value();
    const LengthNorm n = table.norm.value_or(LengthNorm{});
    return {y(0, 0) * n.minutes_std + n.minutes_mean, y(0, 1) * n.rps_std + n.rps_mean};
}

namespace {

std::vector<int> lookup(const std::vector<std::string>& vocab, const std::vector<std::string>& keys) {
    std::vector<int> out;
    out.reserve(keys.size());
    for (const auto& k : keys) {
        const auto it = std::lower_bound(vocab.begin(), vocab.end(), k);
        if (it == vocab.end() || *it != k) throw DataError("key " + k + " is not in the vocabulary");
        out.push_back(static_cast<int>(it - vocab.begin()));
    }
    return out;
}

void require_finite(double loss, const char* what) {
    if (!std::isfinite(loss)) throw NumericError(std::string(what) + " diverged (non-finite loss)");
}

}  // namespace

RpEmbeddingResult train_rp_embedding(const std::vector<LengthSample>& data, const std::vector<std::string>& vocabulary,
                                     const RpEmbeddingConfig& cfg) {
    if (data.empty()) throw DataError("length dataset is empty");
    if (cfg.d_rp < 1 || cfg.hidden < 1 || cfg.batch < 1 || cfg.epochs < 0) throw ConfigError("invalid RP embedding config");
    std::vector<std::string> vocab = vocabulary;
    std::sort(vocab.begin(), vocab.end());
    vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());

    std::mt19937_64 rng(cfg.seed);
    nn::Parameter<double> table("rp_table", nn::glorot<double>(static_cast<Eigen::Index>(vocab.size()), cfg.d_rp, rng));
    RpEmbeddingResult result;
    auto& probe = result.probe;
    probe.l1 = nn::Linear<double>("probe.l1", 2 * cfg.d_rp, cfg.hidden, rng);
    probe.act = nn::PReLU<double>("probe.act");
    probe.l2 = nn::Linear<double>("probe.l2", cfg.hidden, 2, rng);

    const LengthNorm norm = length_norm(data);
    const auto n = static_cast<Eigen::Index>(data.size());
    std::vector<std::string> as, bs;
    Mat labels(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = data[static_cast<std::size_t>(i)];
        as.push_back(s.a);
        bs.push_back(s.b);
        labels(i, 0) = (s.minutes - norm.minutes_mean) / norm.minutes_std;
        labels(i, 1) = (s.rps - norm.rps_mean) / norm.rps_std;
    }
    const auto ia = lookup(vocab, as);
    const auto ib = lookup(vocab, bs);

    nn::ParamList<double> params{&table};
    probe.collect(params);
    nn::Adam<double> opt(params, {.lr = cfg.lr});
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    auto forward = [&](nn::Tape<double>& t, const std::vector<std::size_t>& rows) {
        std::vector<int> ra, rb;
        Mat y(static_cast<Eigen::Index>(rows.size()), 2);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            ra.push_back(ia[rows[r]]);
            rb.push_back(ib[rows[r]]);
            y.row(static_cast<Eigen::Index>(r)) = labels.row(static_cast<Eigen::Index>(rows[r]));
        }
        const auto tab = t.param(table);
        const auto x = nn::concat_cols<double>({nn::gather_rows(tab, ra), nn::gather_rows(tab, rb)});
        return nn::mse(probe(t, x), y);
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + static_cast<std::size_t>(cfg.batch))));
            opt.zero_grad();
            nn::Tape<double> t;
            const auto loss = forward(t, rows);
            require_finite(loss.value()(0, 0), "RP embedding training");
            t.backward(loss);
            opt.step();
        }
    }
    nn::Tape<double> t;
    result.final_mse = forward(t, order).value()(0, 0);
    require_finite(result.final_mse, "RP embedding training");
    result.table = EmbeddingTable(vocab, table.value);
    result.table.norm = norm;
    return result;
}

// --- train-number pre-training -------------------------------------------------

void MaskingLaw::validate() const {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("masking probability must be in [0, 1]");
    if (q_back < 0 || q_next < 0 || q_skip < 0) throw ConfigError("offset probabilities must be non-negative");
    if (std::abs(q_back + q_next + q_skip - 1.0) > 1e-9) throw ConfigError("offset probabilities must sum to 1");
}

MaskingLaw::Draw MaskingLaw::sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Draw d;
    d.hidden = u(rng) < p;
    const double r = u(rng);
    d.offset = r < q_back ? -1 : (r < q_back + q_next ? 1 : 2);
    return d;
}

const std::string& PaddedItinerary::at(int k) const {
    static const std::string pre = kPreDeparture;
    static const std::string post = kPostArrival;
    if (k < 0) return pre;
    if (k > n_max()) return post;
    return rps[static_cast<std::size_t>(k)];
}

std::vector<PaddedItinerary> itineraries_from_events(const EventLog& events) {
    std::set<std::pair<std::int64_t, std::vector<std::string>>> seen;
    for (const auto& group : group_by_train_day(events)) {
        std::vector<std::string> rps;
        for (const std::size_t i : group.indices) {
            if (rps.empty() || rps.back() != events[i].rp) rps.push_back(events[i].rp);
        }
        if (!rps.empty()) seen.insert({group.key.train_number, std::move(rps)});
    }
    std::vector<PaddedItinerary> out;
    for (const auto& [train, rps] : seen) out.push_back({std::to_string(train), rps});
    return out;
}

TrainEmbeddingResult train_trainnum_embedding(const std::vector<PaddedItinerary>& itineraries, const MaskingLaw& law,
                                              const EmbeddingTable& rp_table, const TrainEmbeddingConfig& cfg) {
    law.validate();
    if (itineraries.empty()) throw DataError("no itineraries to train on");
    if (cfg.d_train < 1 || cfg.batch < 1 || cfg.epochs < 0 || cfg.samples_per_epoch < 0) {
        throw ConfigError("invalid train-number embedding config");
    }
    if (!rp_table.contains(kPreDeparture) || !rp_table.contains(kPostArrival)) {
        throw ConfigError("RP table lacks the stand-in keys");
    }
    const auto& vocab = rp_table.keys();
    std::vector<std::string> train_keys;
    for (const auto& it : itineraries) {
        if (it.rps.empty()) throw DataError("empty itinerary for train " + it.train);
        train_keys.push_back(it.train);
    }
    std::sort(train_keys.begin(), train_keys.end());
    train_keys.erase(std::unique(train_keys.begin(), train_keys.end()), train_keys.end());

    // padded index tables: position k maps to slot k + 1, stand-ins at the ends
    std::vector<int> train_of;
    std::vector<std::vector<int>> padded;
    for (const auto& it : itineraries) {
        train_of.push_back(lookup(train_keys, {it.train}).front());
        std::vector<std::string> seq;
        for (int k = -1; k <= it.n_max() + 2; ++k) seq.push_back(it.at(k));
        padded.push_back(lookup(vocab, seq));
    }

    std::mt19937_64 rng(cfg.seed);
    nn::Parameter<double> trains("train_table", nn::glorot<double>(static_cast<Eigen::Index>(train_keys.size()), cfg.d_train, rng));
    nn::Parameter<double> rps("rp_table", rp_table.vectors());
    std::vector<nn::Linear<double>> layers;
    std::vector<nn::PReLU<double>> acts;
    Eigen::Index width = cfg.d_train + rp_table.dim();
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
        if (cfg.hidden[l] < 1) throw ConfigError("hidden widths must be positive");
        layers.emplace_back("clf.l" + std::to_string(l), width, cfg.hidden[l], rng);
        acts.emplace_back("clf.act" + std::to_string(l));
        width = cfg.hidden[l];
    }
    nn::Linear<double> head("clf.out", width, static_cast<Eigen::Index>(vocab.size()), rng);
    nn::ParamList<double> params{&trains};
    if (!cfg.freeze_rp) params.push_back(&rps);
    for (auto& l : layers) l.collect(params);
    for (auto& a : acts) a.collect(params);
    head.collect(params);
    nn::Adam<double> opt(params, {.lr = cfg.lr});

    struct Batch {
        std::vector<int> train, rp, target;
        Mat mask;
    };
    std::uniform_int_distribution<std::size_t> pick(0, itineraries.size() - 1);
    auto draw = [&](int size) {
        Batch b;
        b.mask.resize(size, rp_table.dim());
        for (int i = 0; i < size; ++i) {
            const std::size_t it = pick(rng);
            std::uniform_int_distribution<int> pos(0, itineraries[it].n_max());
            const int k = pos(rng);
            const auto d = law.sample(rng);
            b.train.push_back(train_of[it]);
            b.rp.push_back(padded[it][static_cast<std::size_t>(k + 1)]);
            b.target.push_back(padded[it][static_cast<std::size_t>(k + d.offset + 1)]);
            b.mask.row(i).setConstant(d.hidden ? 0.0 : 1.0);
        }
        return b;
    };
    auto logits = [&](nn::Tape<double>& t, const Batch& b) {
        const auto rp_rows = nn::gather_rows(cfg.freeze_rp ? t.constant(rps.value) : t.param(rps), b.rp);
        auto x = nn::concat_cols<double>({nn::gather_rows(t.param(trains), b.train), nn::cwise_mul(rp_rows, t.constant(b.mask))});
        for (std::size_t l = 0; l < layers.size(); ++l) x = acts[l](t, layers[l](t, x));
        return head(t, x);
    };

    TrainEmbeddingResult result;
    const int steps = cfg.samples_per_epoch / cfg.batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int s = 0; s < steps; ++s) {
            const auto b = draw(cfg.batch);
            opt.zero_grad();
            nn::Tape<double> t;
            const auto loss = nn::cross_entropy(logits(t, b), b.target);
            require_finite(loss.value()(0, 0), "train-number embedding training");
            t.backward(loss);
            opt.step();
        }
    }
    const auto eval = draw(2048);
    nn::Tape<double> t;
    const auto out = logits(t, eval);
    result.final_loss = nn::cross_entropy(out, eval.target).value()(0, 0);
    require_finite(result.final_loss, "train-number embedding training");
    int hits = 0;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        Eigen::Index best = 0;
        out.value().row(i).maxCoeff(&best);
        hits += best == eval.target[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    result.accuracy = static_cast<double>(hits) / static_cast<double>(out.rows());
    result.trains = EmbeddingTable(train_keys, trains.value);
    result.rps = EmbeddingTable(vocab, rps.value);
    result.rps.norm = rp_table.norm;
    return result;
}

// --- diagnostics ---------------------------------------------------------------

std::vector<std::pair<std::string, double>> knn_diagnostic(const EmbeddingTable& table, std::string_view key, std::size_t k) {
    const auto self = table.index_of(key);
    if (!self) throw DataError("unknown embedding key " + std::string(key));
    std::vector<std::pair<std::string, double>> all;
    const Eigen::RowVectorXd v = table.vectors().row(static_cast<Eigen::Index>(*self));
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (i == *self) continue;
        all.push_back({table.keys()[i], (table.vectors().row(static_cast<Eigen::Index>(i)) - v).norm()});
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

namespace {

std::vector<int> hop_distances(const NetworkGraph& g, std::size_t from) {
    std::vector<int> dist(g.node_count(), -1);
    std::deque<std::size_t> queue{from};
    dist[from] = 0;
    while (!queue.empty()) {
        const std::size_t u = queue.front();
        queue.pop_front();
        for (const std::size_t v : g.neighbours(u)) {
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    return dist;
}

}  // namespace

LocalityReport knn_locality(const EmbeddingTable& table, const NetworkGraph& g, std::size_t k, int resamples,
                            std::mt19937_64& rng) {
    std::vector<std::string> keys;
    for (const auto& key : table.keys()) {
        if (g.has_node(key)) keys.push_back(key);
    }
    if (keys.size() <= k || k == 0) throw DataError("not enough graph keys for the locality test");
    std::vector<std::vector<int>> hops;
    std::vector<std::size_t> node;
    for (const auto& key : keys) node.push_back(*g.index_of(key));
    for (const std::size_t n : node) hops.push_back(hop_distances(g, n));
    Eigen::MatrixXd vecs(static_cast<Eigen::Index>(keys.size()), table.dim());
    for (std::size_t i = 0; i < keys.size(); ++i) vecs.row(static_cast<Eigen::Index>(i)) = table.vector(keys[i]);

    // mean hop distance over reachable (key, neighbour) pairs
    auto statistic = [&](const std::vector<std::vector<std::size_t>>& sets) {
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < sets.size(); ++i) {
            for (const std::size_t j : sets[i]) {
                const int h = hops[i][node[j]];
                if (h < 0) continue;
                total += h;
                ++count;
            }
        }
        return count ? total / static_cast<double>(count) : 0.0;
    };

    std::vector<std::vector<std::size_t>> nearest(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        std::vector<std::pair<double, std::size_t>> d;
        for (std::size_t j = 0; j < keys.size(); ++j) {
            if (j != i) d.push_back({(vecs.row(static_cast<Eigen::Index>(j)) - vecs.row(static_cast<Eigen::Index>(i))).norm(), j});
        }
        std::sort(d.begin(), d.end());
        for (std::size_t m = 0; m < k; ++m) nearest[i].push_back(d[m].second);
    }
    LocalityReport report;
    report.observed = statistic(nearest);
    std::vector<std::size_t> others(keys.size());
    int not_larger = 0;
    double null_total = 0.0;
    for (int r = 0; r < resamples; ++r) {
        std::vector<std::vector<std::size_t>> sets(keys.size());
        for (std::size_t i = 0; i < keys.size(); ++i) {
            others.resize(keys.size());
            std::iota(others.begin(), others.end(), 0);
            others.erase(others.begin() + static_cast<std::ptrdiff_t>(i));
            for (std::size_t m = 0; m < k; ++m) {
                std::uniform_int_distribution<std::size_t> u(m, others.size() - 1);
                std::swap(others[m], others[u(rng)]);
                sets[i].push_back(others[m]);
            }
        }
        const double s = statistic(sets);
        null_total += s;
        not_larger += s <= report.observed ? 1 : 0;
    }
    report.null_mean = resamples > 0 ? null_total / resamples : 0.0;
    report.p_value = (1.0 + not_larger) / (1.0 + resamples);
    return report;
}

ProbeReport linear_probe_distance(const EmbeddingTable& table, const RpPositions& positions, std::string_view hub,
                                  std::uint64_t seed) {
    const auto hub_it = positions.find(std::string(hub));
    if (hub_it == positions.end()) throw DataError("hub " + std::string(hub) + " has no position");
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (positions.count(table.keys()[i])) rows.push_back(i);
    }
    if (rows.size() < 5) throw DataError("too few positioned keys for the distance probe");
    std::mt19937_64 rng(seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(rows.size()))));
    const std::size_t n_train = rows.size() - n_test;

    auto design = [&](std::size_t from, std::size_t count, Eigen::MatrixXd& x, Eigen::VectorXd& y) {
        x.resize(static_cast<Eigen::Index>(count), table.dim() + 1);
        y.resize(static_cast<Eigen::Index>(count));
        for (std::size_t r = 0; r < count; ++r) {
            const std::size_t i = rows[from + r];
            const auto e = static_cast<Eigen::Index>(r);
            x(e, 0) = 1.0;
            x.row(e).tail(table.dim()) = table.vectors().row(static_cast<Eigen::Index>(i));
            y(e) = (positions.at(table.keys()[i]) - hub_it->second).norm();
        }
    };
    Eigen::MatrixXd xtr, xte;
    Eigen::VectorXd ytr, yte;
    design(0, n_train, xtr, ytr);
    design(n_train, n_test, xte, yte);

    ProbeReport report;
    report.n_train = n_train;
    report.n_test = n_test;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xtr);
    Eigen::VectorXd beta;
    if (qr.rank() < xtr.cols()) {
        report.rank_deficient = true;
        beta = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(xtr).solve(ytr);
    } else {
        beta = qr.solve(ytr);
    }
    const Eigen::VectorXd residual = yte - xte * beta;
    const double ss_res = residual.squaredNorm();
    const double ss_tot = (yte.array() - yte.mean()).square().sum();
    report.r2 = ss_tot > 1e-12 ? 1.0 - ss_res / ss_tot : (ss_res < 1e-12 ? 1.0 : 0.0);
    return report;
}

}  // namespace delayprop
