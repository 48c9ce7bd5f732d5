#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "delayprop/events.hpp"
#include "delayprop/ingest.hpp"

namespace delayprop::baselines {

/// Last measured delay repeated over the future window (0 before departure).
std::vector<double> translation_predict(const TrainToken& token);
Eigen::MatrixXd translation_snapshot(const Snapshot& snap);

/// eps(n) = alpha eps(n-1) + beta eps(n-2) + gamma
struct Ar2Params {
    double alpha = 1.0;
    double beta = 0.0;
    double gamma = 0.0;
    double residual_variance = 0.0;
    std::size_t samples = 0;
    bool fallback = false;  // too little data: behaves as translation
};

/// OLS over consecutive triples of every series. Rank-deficient designs use
/// the minimum-norm solution.
Ar2Params fit_ar2(const std::vector<std::vector<double>>& series);
inline Ar2Params fit_ar2(const std::vector<double>& series) { return fit_ar2(std::vector<std::vector<double>>{series}); }

/// Recursive multi-step forecast from the two latest values.
std::vector<double> ar2_predict(const Ar2Params& p, double prev1, double prev2, int steps);

/// Per train number parameters fitted on per-day delay trajectories.
struct Ar2Model {
    std::map<std::int64_t, Ar2Params> per_train;

    const Ar2Params* find(std::int64_t train_number) const;
    /// Tokens with fewer than two observations, or trains without a fit,
    /// fall back to translation.
    Eigen::MatrixXd predict(const Snapshot& snap) const;
};

Ar2Model fit_ar2_model(const EventLog& history);

nlohmann::json to_json(const Ar2Model& model);
Ar2Model ar2_model_from_json(const nlohmann::json& j);

struct BayesNode {
    std::int64_t train_number = 0;
    std::string rp;
    double time = 0.0;  // median scheduled seconds after midnight

    friend bool operator<(const BayesNode& a, const BayesNode& b) {
        return std::tie(a.train_number, a.rp) < std::tie(b.train_number, b.rp);
    }
};

/// L(x) = b(x) + sum over parents y of w(y, x) L(y). Nodes are kept in
/// chronological (hence topological) order.
struct BayesNet {
    std::vector<BayesNode> nodes;
    std::vector<std::vector<std::pair<std::size_t, double>>> parents;  // (parent index, weight)
    std::vector<double> bias;
    std::vector<std::uint8_t> underdetermined;
    double global_mean = 0.0;
    double window_minutes = 30.0;

    std::size_t edge_count() const;
    std::optional<std::size_t> index_of(std::int64_t train_number, const std::string& rp) const;

    /// Evaluates the recursion; measured nodes keep their measured delay.
    std::vector<double> evaluate(const std::map<std::size_t, double>& measured) const;
};

/// One value per (day, train, rp): the delay of the train's last event at
/// that RP that day.
struct NodeObservation {
    std::int64_t day = 0;
    std::int64_t train_number = 0;
    std::string rp;
    Timestamp time = 0;
    Timestamp scheduled = 0;
    double delay = 0.0;
};
std::vector<NodeObservation> node_observations(const EventLog& events);

/// Nodes for every observed (train, RP); edge y -> x iff y precedes x and they
/// share the train, share the RP, or lie within `window_minutes`.
BayesNet build_bayes_graph(const EventLog& history, double window_minutes = 30.0);

/// Ridge least squares per node (parents missing on a day are imputed with
/// their historical mean). Parentless nodes get the historical mean as bias.
void fit_bayes(BayesNet& net, const EventLog& history, double lambda = 1e-3);

struct BayesPrediction {
    Eigen::MatrixXd minutes;
    std::size_t unseen = 0;  // future entries answered by the global mean
};

/// Measured delays are the day's observations up to t0.
BayesPrediction bayes_predict(const BayesNet& net, const EventLog& day_events, const Snapshot& snap);

nlohmann::json to_json(const BayesNet& net);
BayesNet bayes_net_from_json(const nlohmann::json& j);

}  // namespace delayprop::baselines
