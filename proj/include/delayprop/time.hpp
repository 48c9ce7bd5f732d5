#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace delayprop {

/// Seconds since 1970-01-01 00:00:00 (naive local time, no zone handling).
using Timestamp = std::int64_t;

inline constexpr Timestamp kSecondsPerMinute = 60;
inline constexpr Timestamp kSecondsPerDay = 86400;

/// Days since the epoch for a proleptic Gregorian date.
std::int64_t days_from_civil(int year, unsigned month, unsigned day);

/// Parses "YYYY-MM-DD HH:MM:SS". Throws DataError on malformed input.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

/// Index of the calendar day containing t (floor division).
inline std::int64_t day_index(Timestamp t) {
    return t >= 0 ? t / kSecondsPerDay : -((-t + kSecondsPerDay - 1) / kSecondsPerDay);
}
inline Timestamp day_start(std::int64_t day) { return day * kSecondsPerDay; }

/// 0 = Monday ... 6 = Sunday.
int day_of_week(std::int64_t day);

/// Minutes elapsed since midnight of t's day.
double minute_of_day(Timestamp t);

}  // namespace delayprop
