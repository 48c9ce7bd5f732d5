#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "delayprop/ingest.hpp"
#include "delayprop/railgraph.hpp"

namespace delayprop::eval {

/// Predicted delays in minutes, one row per token and one column per future entry.
using Predictor = std::function<Eigen::MatrixXd(const Snapshot&)>;

struct Metric {
    double value = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;  // denominator
    bool available() const { return count > 0; }
};

struct MetricReport {
    Metric mae;
    Metric mse;
    Metric incident;  // percent within tolerance
    Metric service;
    std::size_t clip_violations = 0;  // prediction + scheduled remaining < 0
};

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);

/// Streaming MAE/MSE; independent of insertion order.
class ErrorAccumulator {
public:
    void add(double prediction, double realized);
    Metric mae() const;
    Metric mse() const;

private:
    double abs_ = 0.0;
    double sq_ = 0.0;
    std::size_t n_ = 0;
};

std::pair<Metric, Metric> mae_mse(const std::vector<double>& predictions, const std::vector<double>& realized,
                                  const std::vector<std::uint8_t>& mask);

/// A/T observations at stations (BV suffix).
bool is_station_stop(const FutureEntry& entry);

struct EvalDay {
    std::int64_t day = 0;
    EventLog events;  // cleaned, this day only
    PlanView plan;
};

EvalDay make_eval_day(const EventLog& cleaned, std::int64_t day);

struct EvalConfig {
    SnapshotParams snapshot;
    double spacing_minutes = 15.0;
    double tolerance_minutes = 5.0;  // inclusive
    double incident_threshold = 5.0;
    double incident_lag_minutes = 10.0;
    double service_lead_minutes = 30.0;
};

/// Errors over every realized future position of the day's snapshot grid.
void accumulate_errors(const Predictor& predictor, const EvalDay& day, const EvalConfig& cfg, ErrorAccumulator& acc,
                       std::size_t* clip_violations = nullptr);

/// Per passenger train: snapshot at its first delay >= threshold plus the
/// lag; station stops of its future window are scored.
Metric incident_metric(const Predictor& predictor, const std::vector<EvalDay>& days, const EvalConfig& cfg = {});

/// Per passenger station stop: snapshot at scheduled time minus the lead.
Metric service_metric(const Predictor& predictor, const std::vector<EvalDay>& days, const EvalConfig& cfg = {});

MetricReport evaluate(const Predictor& predictor, const std::vector<EvalDay>& days, const EvalConfig& cfg = {});

struct DensityConfig {
    int nx = 100;
    int ny = 100;
    double bandwidth_fraction = 0.05;  // of the bounding-box diagonal
    double half_window_minutes = 15.0;
    double epsilon = 1e-9;
};

struct DensityGrid {
    int nx = 0;
    int ny = 0;
    Eigen::Vector2d origin = Eigen::Vector2d::Zero();  // lower-left corner
    Eigen::Vector2d cell = Eigen::Vector2d::Ones();
    Eigen::MatrixXd values;  // ny x nx

    Eigen::Vector2d center(int ix, int iy) const;
    Eigen::Vector2d argmax() const;
};

/// Delay-weighted Gaussian density of the window's events divided by the
/// density of RP positions.
DensityGrid density_grid(const EventLog& events, Timestamp t_center, const RpPositions& positions,
                         const DensityConfig& cfg = {});

void write_density_csv(std::ostream& out, const DensityGrid& grid);

}  // namespace delayprop::eval
