#pragma once

#include <cstdint>
#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "delayprop/events.hpp"
#include "delayprop/railgraph.hpp"

namespace delayprop::sim {

/// Zero-inflated lognormal: 0 with probability p_zero, else
/// min(exp(N(log_mu, log_sigma)), cap_minutes) minutes.
struct DelayLaw {
    double p_zero = 1.0;
    double log_mu = 1.0;
    double log_sigma = 1.0;
    double cap_minutes = 180.0;

    template <typename Rng>
    double sample(Rng& rng) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (u(rng) < p_zero) return 0.0;
        std::lognormal_distribution<double> body(log_mu, log_sigma);
        return std::min(body(rng), cap_minutes);
    }
};

struct PlanBias {
    std::string a;
    std::string b;
    double minutes = 0.0;  // scheduled this much faster than nominal
};

struct TurnaroundPair {
    std::int64_t up = 0;
    std::int64_t down = 0;
    double min_turnaround_minutes = 5.0;
};

struct NoiseConfig {
    double drop_prob = 0.0;
    double duplicate_prob = 0.0;
    double swap_prob = 0.0;
};

struct SimConfig {
    std::uint64_t seed = 1;
    int n_rps = 60;
    int grade_separated_rps = 0;  // size of a disconnected line; 0 for none
    int n_routes = 6;
    int n_trains_per_day = 40;
    double freight_fraction = 0.15;
    double headway_minutes = 3.0;
    /// Longest wait behind a late plan-predecessor before a train is
    /// dispatched ahead of it; 0 keeps the planned order strictly.
    double regulation_minutes = 15.0;
    double dwell_minutes = 1.0;
    int default_platforms = 2;
    std::map<std::string, int> platform_counts;
    DelayLaw origin_delay{0.88, 2.6, 1.4};
    DelayLaw segment_delay{0.96, 0.5, 1.5};
    /// Fraction of nominal running time a late train can make up per edge.
    double recovery_fraction = 0.08;
    std::vector<PlanBias> plan_bias_edges;
    int auto_bias_edges = 4;  // extra random biased edges drawn per seed
    std::vector<TurnaroundPair> turnaround_pairs;
    bool auto_turnarounds = true;
    double auto_turnaround_minutes = 5.0;
    bool enforce_headway = true;
    bool enforce_platforms = true;
    bool enforce_turnarounds = true;
    /// Extra origin delay (minutes) for specific trains, applied every day.
    std::map<std::int64_t, double> injected_origin_delays;
    NoiseConfig noise;
    int days = 1;
    std::string start_date = "2018-01-08";

    /// Throws ConfigError on infeasible values.
    void validate() const;
};

nlohmann::json to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j);

struct SimNetwork {
    NetworkGraph graph;  // edge median = nominal minutes
    RpPositions positions;
    std::vector<std::string> grade_separated;  // ids of the disconnected line, if any
};

struct ItineraryEntry {
    std::string rp;
    ObsType type = ObsType::P;
    double offset_minutes = 0.0;  // scheduled, from departure
    int rank = 0;
};

struct TrainService {
    std::int64_t train_number = 0;
    TrainCategory category = TrainCategory::undefined;
    std::vector<ItineraryEntry> itinerary;
    double departure_minute = 0.0;  // minutes after midnight
    bool weekdays_only = false;

    /// Distinct RPs in visiting order (A/D pairs collapsed).
    std::vector<std::string> rp_sequence() const;
};

struct CirculationPlan {
    std::vector<TrainService> services;
    std::vector<TurnaroundPair> turnarounds;
    std::vector<PlanBias> biases;  // effective biases (configured + drawn)

    const TrainService* find(std::int64_t train_number) const;
    /// Services running on a given calendar day.
    std::vector<const TrainService*> running_on(std::int64_t day) const;
};

nlohmann::json to_json(const SimNetwork& net);
SimNetwork network_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CirculationPlan& plan);
CirculationPlan plan_from_json(const nlohmann::json& j);

SimNetwork generate_network(const SimConfig& cfg);
CirculationPlan generate_plan(const SimNetwork& net, const SimConfig& cfg);

/// Actual (pre-rounding) times of one train run, seconds after midnight.
struct Trajectory {
    std::int64_t train_number = 0;
    std::vector<double> scheduled;
    std::vector<double> actual;
};

struct EdgeEntry {
    std::string from;
    std::string to;
    std::int64_t train_number = 0;
    double time = 0.0;  // seconds after midnight
};

struct SimDay {
    std::int64_t day = 0;        // epoch day index
    EventLog events;             // ground truth, canonical order
    std::vector<Trajectory> trajectories;
    std::vector<EdgeEntry> edge_entries;
};

/// Simulates calendar day `start day + day_offset`. Throws DataError on deadlock.
SimDay simulate_day(const SimNetwork& net, const CirculationPlan& plan, const SimConfig& cfg,
                    int day_offset);

struct NoiseReport {
    std::size_t dropped = 0;
    std::size_t duplicated = 0;
    std::size_t swapped = 0;
};

/// Post-simulation corruption: drop-out, duplicate rows and rank swaps.
EventLog inject_noise(const EventLog& clean, const NoiseConfig& noise, std::uint64_t seed,
                      NoiseReport* report = nullptr);

struct CalibrationBand {
    double mean_lo = 3.0, mean_hi = 8.0;
    double std_lo = 15.0, std_hi = 40.0;
    double median = 0.0;
};

struct CalibrationReport {
    double mean = 0.0;
    double median = 0.0;
    double stddev = 0.0;
    double events_per_day = 0.0;
    double trains_per_day = 0.0;
    std::size_t days = 0;
    bool mean_ok = false;
    bool median_ok = false;
    bool std_ok = false;
    bool passed() const { return mean_ok && median_ok && std_ok; }
};

CalibrationReport calibration_report(const EventLog& events, const CalibrationBand& band = {});
nlohmann::json to_json(const CalibrationReport& report);

/// Deterministic 64-bit mixer used to derive per-stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace delayprop::sim
