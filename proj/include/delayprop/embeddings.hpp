#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "delayprop/nnkit.hpp"
#include "delayprop/railgraph.hpp"

namespace delayprop {

/// z-score constants of the length labels.
struct LengthNorm {
    double minutes_mean = 0.0, minutes_std = 1.0;
    double rps_mean = 0.0, rps_std = 1.0;
};

/// Keyed vectors of a common dimension; keys are kept sorted.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::vector<std::string> keys, Eigen::MatrixXd vectors);

    int dim() const { return static_cast<int>(vectors_.cols()); }
    std::size_t size() const { return keys_.size(); }
    const std::vector<std::string>& keys() const { return keys_; }
    const Eigen::MatrixXd& vectors() const { return vectors_; }
    Eigen::MatrixXd& vectors() { return vectors_; }
    std::optional<std::size_t> index_of(std::string_view key) const;
    bool contains(std::string_view key) const { return index_of(key).has_value(); }
    /// Throws DataError for unknown keys.
    Eigen::RowVectorXd vector(std::string_view key) const;

    std::optional<LengthNorm> norm;

private:
    std::vector<std::string> keys_;
    Eigen::MatrixXd vectors_;
};

nlohmann::json to_json(const EmbeddingTable& table);
EmbeddingTable embedding_table_from_json(const nlohmann::json& j);
void save_table_binary(const std::string& path, const EmbeddingTable& table);
EmbeddingTable load_table_binary(const std::string& path);

/// RP vocabulary: every graph node plus the two stand-ins, sorted.
std::vector<std::string> rp_vocabulary(const NetworkGraph& g);

// --- itinerary length pre-training --------------------------------------------

struct LengthSample {
    std::string a;
    std::string b;
    double minutes = 0.0;
    int rps = 1;  // RPs on the path, endpoints included
};

/// Uniform node pairs drawn within connected components of at least two nodes.
std::vector<LengthSample> make_length_dataset(const NetworkGraph& g, std::size_t n_samples, std::mt19937_64& rng);
LengthNorm length_norm(const std::vector<LengthSample>& data);

struct RpEmbeddingConfig {
    int d_rp = 8;
    int hidden = 64;
    int epochs = 60;
    int batch = 64;
    double lr = 3e-3;
    std::uint64_t seed = 1;
};

/// Linear(2d, hidden) -> PReLU -> Linear(hidden, 2) over concatenated pair embeddings.
struct LengthProbe {
    nn::Linear<double> l1;
    nn::PReLU<double> act;
    nn::Linear<double> l2;

    nn::Var<double> operator()(nn::Tape<double>& t, nn::Var<double> pairs);
    void collect(nn::ParamList<double>& out);
    /// (minutes, rp count) in label units.
    std::pair<double, double> predict(const EmbeddingTable& table, std::string_view a, std::string_view b);
};

struct RpEmbeddingResult {
    EmbeddingTable table;
    LengthProbe probe;
    double final_mse = 0.0;  // normalized units, full dataset
};

/// Jointly fits the RP table (graph nodes and stand-ins) and the probe.
RpEmbeddingResult train_rp_embedding(const std::vector<LengthSample>& data, const std::vector<std::string>& vocabulary,
                                     const RpEmbeddingConfig& cfg);

// --- train-number pre-training ------------------------------------------------

struct MaskingLaw {
    double p = 0.15;
    double q_back = 0.07;   // offset -1
    double q_next = 0.75;   // offset +1
    double q_skip = 0.18;   // offset +2

    void validate() const;  // throws ConfigError
    struct Draw {
        bool hidden = false;
        int offset = 1;
    };
    Draw sample(std::mt19937_64& rng) const;
};

/// RP list of one train with stand-in padding outside its range.
struct PaddedItinerary {
    std::string train;
    std::vector<std::string> rps;

    int n_max() const { return static_cast<int>(rps.size()) - 1; }
    const std::string& at(int k) const;
};

/// One itinerary per distinct (train number, RP sequence), A/D collapsed.
std::vector<PaddedItinerary> itineraries_from_events(const EventLog& events);

struct TrainEmbeddingConfig {
    int d_train = 8;
    std::vector<int> hidden{64};
    int epochs = 40;
    int samples_per_epoch = 4096;
    int batch = 64;
    double lr = 3e-3;
    bool freeze_rp = false;
    std::uint64_t seed = 1;
};

struct TrainEmbeddingResult {
    EmbeddingTable trains;
    EmbeddingTable rps;  // updated unless frozen
    double final_loss = 0.0;
    double accuracy = 0.0;  // top-1 on a fresh batch of draws
};

TrainEmbeddingResult train_trainnum_embedding(const std::vector<PaddedItinerary>& itineraries, const MaskingLaw& law,
                                              const EmbeddingTable& rp_table, const TrainEmbeddingConfig& cfg);

// --- diagnostics --------------------------------------------------------------

/// k nearest other keys by Euclidean distance, ties broken by key.
std::vector<std::pair<std::string, double>> knn_diagnostic(const EmbeddingTable& table, std::string_view key, std::size_t k);

struct LocalityReport {
    double observed = 0.0;  // mean hop distance from a key to its k nearest neighbours
    double null_mean = 0.0; // same statistic over random key sets
    double p_value = 1.0;
};

/// Permutation test of kNN sets against random key sets of the same size.
LocalityReport knn_locality(const EmbeddingTable& table, const NetworkGraph& g, std::size_t k, int resamples,
                            std::mt19937_64& rng);

struct ProbeReport {
    double r2 = 0.0;
    bool rank_deficient = false;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
};

/// OLS (with intercept) from vectors to Euclidean distance from `hub`; R² on
/// a held-out 20% split.
ProbeReport linear_probe_distance(const EmbeddingTable& table, const RpPositions& positions, std::string_view hub,
                                  std::uint64_t seed = 1);

}  // namespace delayprop
