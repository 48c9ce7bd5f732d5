#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "delayprop/events.hpp"

namespace delayprop {

namespace sim {
struct CirculationPlan;
}

/// Stand-in RP ids used to pad windows before the origin and after the terminus.
inline constexpr const char* kPreDeparture = "preDeparture";
inline constexpr const char* kPostArrival = "postArrival";

struct CleanReport {
    std::size_t input_rows = 0;
    std::size_t duplicates_removed = 0;
    std::size_t ranks_reordered = 0;  // events whose rank changed
    std::size_t groups_reordered = 0;
};

/// Per (day, train): ranks are reassigned so they follow observation times,
/// then rows sharing (rank, type, rp, train, day) collapse to the smallest id.
/// Output is in canonical (time, id) order.
EventLog clean_events(const EventLog& raw, CleanReport* report = nullptr);

/// One entry of the reconstructed theoretical plan.
struct PlanEntry {
    std::string rp;
    ObsType type = ObsType::P;
    Timestamp scheduled = 0;
    int rank = 0;
    std::optional<int> realized_delay;  // from the day's log; targets only
    std::optional<std::int64_t> event_id;
};

struct PlannedRun {
    std::int64_t train_number = 0;
    std::vector<PlanEntry> entries;  // itinerary order
};

/// Theoretical circulation plan of one day.
struct PlanView {
    std::int64_t day = 0;
    std::vector<PlannedRun> runs;  // sorted by train number

    const PlannedRun* find(std::int64_t train_number) const;
};

/// Rebuilds the plan of `day` from cleaned observations (time minus delay).
PlanView plan_view_from_events(const EventLog& cleaned, std::int64_t day);

/// Plan of `day` from a known circulation plan; realized delays are matched
/// from the log by (train, rank, type, rp) and stay empty when unobserved.
PlanView plan_view_from_schedule(const sim::CirculationPlan& plan, std::int64_t day, const EventLog& cleaned);

struct SnapshotParams {
    int n_prev = 4;
    int n_foll = 8;
    double h_arr_minutes = 30.0;
    double h_dep_minutes = 30.0;
    /// Train-number slices [lo, hi) left out of snapshots.
    std::vector<std::pair<std::int64_t, std::int64_t>> excluded_numbers;
};

struct PastEntry {
    std::string rp;
    double minutes_since = 0.0;
    int delay = 0;
    std::optional<ObsType> type;  // empty on padding
};

struct FutureEntry {
    std::string rp;
    double minutes_until = 0.0;
    std::optional<ObsType> type;
    Timestamp scheduled = 0;
};

struct TrainToken {
    std::int64_t train_number = 0;
    TrainCategory category = TrainCategory::undefined;
    std::vector<PastEntry> past;      // oldest first, n_prev entries
    std::vector<FutureEntry> future;  // nearest first, n_foll entries
    int translation_delay = 0;
    std::vector<double> targets;
    std::vector<std::uint8_t> target_mask;

    bool departed() const;
};

struct Exogenous {
    int day_of_week = 0;  // 0 = Monday
    double minute_of_day = 0.0;
    int n_trains = 0;
};

struct Snapshot {
    Timestamp t0 = 0;
    std::vector<TrainToken> tokens;  // sorted by train number
    Exogenous exogenous;
    std::string warning;
};

/// Builds the snapshot at t0. Observations after t0 only contribute plan
/// fields and training targets.
Snapshot build_snapshot(const EventLog& cleaned, const PlanView& plan, Timestamp t0, const SnapshotParams& params = {});

/// Evenly spaced cut times from 06:00 to 23:00 inclusive.
std::vector<Timestamp> snapshot_schedule(std::int64_t day, double spacing_minutes);

nlohmann::json to_json(const Snapshot& snap, bool with_targets = true);
Snapshot snapshot_from_json(const nlohmann::json& j);

}  // namespace delayprop
