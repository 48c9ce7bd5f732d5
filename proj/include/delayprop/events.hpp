#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "delayprop/time.hpp"

namespace delayprop {

/// Beacon observation type: origin, terminus, passage, arrival, departure.
enum class ObsType : std::uint8_t { O = 0, T = 1, P = 2, A = 3, D = 4 };
inline constexpr int kObsTypeCount = 5;

char to_char(ObsType type);
ObsType obs_type_from_char(char c);  // throws DataError

/// Train service classes encoded in the numbering plan.
enum class TrainCategory : std::uint8_t { high_speed = 0, regional = 1, freight = 2, undefined = 3 };
inline constexpr int kTrainCategoryCount = 4;

/// Category slice of a train number:
///   [1, 10000) high-speed, [10000, 30000) national classic (regional class),
///   [30000, 100000) freight, [800000, 900000) regional, anything else undefined.
TrainCategory category_of(std::int64_t train_number);
bool is_passenger(TrainCategory category);
std::string_view to_string(TrainCategory category);

struct ObservationEvent {
    std::int64_t id = 0;
    Timestamp time = 0;
    std::string rp;
    ObsType type = ObsType::P;
    int delay = 0;  // minutes, rounded; negative for early trains
    std::int64_t train_number = 0;
    std::optional<int> rank;

    /// Plan time reconstructed from the observation: time minus delay.
    Timestamp theoretical_time() const { return time - static_cast<Timestamp>(delay) * kSecondsPerMinute; }

    friend bool operator==(const ObservationEvent&, const ObservationEvent&) = default;
};

using EventLog = std::vector<ObservationEvent>;

/// Sorts by (time, id), the order used for every log written to disk.
void sort_canonical(EventLog& events);

struct CsvReadReport {
    std::size_t rows = 0;
    std::size_t malformed = 0;
};

/// Reads `id,time,rp,type,delay,trainNum[,rank]`. Malformed rows are skipped
/// and counted; a missing or unknown header throws DataError.
EventLog read_events_csv(std::istream& in, CsvReadReport* report = nullptr);
EventLog read_events_csv_file(const std::string& path, CsvReadReport* report = nullptr);

void write_events_csv(std::ostream& out, const EventLog& events, bool with_rank = true);
void write_events_csv_file(const std::string& path, const EventLog& events, bool with_rank = true);

}  // namespace delayprop

namespace delayprop {

/// (service day, train number) grouping key.
struct TrainDayKey {
    std::int64_t day = 0;
    std::int64_t train_number = 0;
    auto operator<=>(const TrainDayKey&) const = default;
};

struct TrainDayGroup {
    TrainDayKey key;
    std::vector<std::size_t> indices;  // into the source log, itinerary order
};

/// Itinerary ordering: rank when both events carry distinct ranks, else time,
/// then observation type (A before D), then id.
bool itinerary_less(const ObservationEvent& a, const ObservationEvent& b);

/// Groups events per (day, train) with each group in itinerary order; groups
/// are sorted by key.
std::vector<TrainDayGroup> group_by_train_day(const EventLog& events);

}  // namespace delayprop
