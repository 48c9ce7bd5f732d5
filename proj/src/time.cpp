#include "delayprop/time.hpp"

#include <charconv>
#include <cstdio>

#include "delayprop/errors.hpp"

namespace delayprop {

std::int64_t days_from_civil(int year, unsigned month, unsigned day) {
    year -= month <= 2 ? 1 : 0;
    const std::int64_t era = (year >= 0 ? year : year - 399) / 400;
    const auto yoe = static_cast<unsigned>(year - era * 400);
    const unsigned doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

namespace {

void civil_from_days(std::int64_t z, int& year, unsigned& month, unsigned& day) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    day = doy - (153 * mp + 2) / 5 + 1;
    month = mp < 10 ? mp + 3 : mp - 9;
    year = static_cast<int>(yoe + era * 400) + (month <= 2 ? 1 : 0);
}

int parse_field(std::string_view text, std::size_t pos, std::size_t len) {
    int value = 0;
    const char* first = text.data() + pos;
    const auto [ptr, ec] = std::from_chars(first, first + len, value);
    if (ec != std::errc{} || ptr != first + len) {
        throw DataError("malformed timestamp: '" + std::string(text) + "'");
    }
    return value;
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
    if (text.size() != 19 || text[4] != '-' || text[7] != '-' || text[10] != ' ' ||
        text[13] != ':' || text[16] != ':') {
        throw DataError("malformed timestamp: '" + std::string(text) + "'");
    }
    const int year = parse_field(text, 0, 4);
    const int month = parse_field(text, 5, 2);
    const int day = parse_field(text, 8, 2);
    const int hour = parse_field(text, 11, 2);
    const int minute = parse_field(text, 14, 2);
    const int second = parse_field(text, 17, 2);
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 ||
        second > 59) {
        throw DataError("timestamp out of range: '" + std::string(text) + "'");
    }
    return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) *
               kSecondsPerDay +
           hour * 3600 + minute * 60 + second;
}

std::string format_timestamp(Timestamp t) {
    const std::int64_t day = day_index(t);
    const Timestamp rem = t - day * kSecondsPerDay;
    int year = 0;
    unsigned month = 0;
    unsigned dom = 0;
    civil_from_days(day, year, month, dom);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d:%02d", year, month, dom,
                  static_cast<int>(rem / 3600), static_cast<int>(rem % 3600 / 60),
                  static_cast<int>(rem % 60));
    return buf;
}

int day_of_week(std::int64_t day) {
    // 1970-01-01 was a Thursday.
    const std::int64_t w = (day + 3) % 7;
    return static_cast<int>(w < 0 ? w + 7 : w);
}

double minute_of_day(Timestamp t) {
    return static_cast<double>(t - day_start(day_index(t))) / 60.0;
}

}  // namespace delayprop
