#include <doctest.h>

#include <sstream>

#include "delayprop/errors.hpp"
#include "delayprop/events.hpp"

using namespace delayprop;

TEST_CASE("timestamps round-trip and expose calendar fields") {
    const Timestamp t = parse_timestamp("2018-01-06 09:42:30");
    CHECK(format_timestamp(t) == "2018-01-06 09:42:30");
    CHECK(day_of_week(day_index(t)) == 5);  // Saturday
    CHECK(minute_of_day(t) == doctest::Approx(9 * 60 + 42.5));
    CHECK_THROWS_AS(parse_timestamp("2018-01-06T09:42:30"), DataError);
    CHECK_THROWS_AS(parse_timestamp("2018-13-06 09:42:30"), DataError);
}

TEST_CASE("events CSV reads the sample table layout") {
    std::istringstream in(
        "id,time,rp,type,delay,trainNum\n"
        "462175827,2018-01-06 09:42:30,681247BV,P,-4,6920\n"
        "931562731,2018-01-04 20:54:24,11320933,P,111,4453\n"
        "147732417,2018-01-08 05:20:55,715938WS,O,16,220\n"
        "108326080,2018-01-01 22:13:22,713339RV,P,7,853221\n"
        "1,not a time,713339RV,P,7,853221\n"
        "2,2018-01-01 22:13:22,713339RV,X,7,853221\n");
    CsvReadReport report;
    const auto events = read_events_csv(in, &report);
    REQUIRE(events.size() == 4);
    CHECK(report.rows == 6);
    CHECK(report.malformed == 2);
    CHECK(events[0].delay == -4);
    CHECK(events[0].train_number == 6920);
    CHECK(events[1].delay == 111);
    CHECK(events[2].type == ObsType::O);
    CHECK_FALSE(events[0].rank.has_value());
    CHECK(events[0].theoretical_time() == events[0].time + 4 * 60);
}

TEST_CASE("events CSV write/read preserves rows including rank") {
    EventLog log{{7, parse_timestamp("2018-01-08 10:00:00"), "110000BV", ObsType::A, 3, 6900, 11},
                 {8, parse_timestamp("2018-01-08 10:01:00"), "110000BV", ObsType::D, 3, 6900, 11}};
    std::stringstream buf;
    write_events_csv(buf, log);
    CHECK(read_events_csv(buf) == log);
}

TEST_CASE("unknown header is a data error") {
    std::istringstream in("foo,bar\n");
    CHECK_THROWS_AS(read_events_csv(in), DataError);
}

TEST_CASE("train number slices map to categories") {
    CHECK(category_of(6920) == TrainCategory::high_speed);
    CHECK(category_of(4453) == TrainCategory::high_speed);
    CHECK(category_of(12000) == TrainCategory::regional);
    CHECK(category_of(40001) == TrainCategory::freight);
    CHECK(category_of(853221) == TrainCategory::regional);
    CHECK(category_of(220000) == TrainCategory::undefined);
    CHECK(is_passenger(TrainCategory::regional));
    CHECK_FALSE(is_passenger(TrainCategory::freight));
}

TEST_CASE("grouping orders each train-day by rank then time") {
    const Timestamp t0 = parse_timestamp("2018-01-08 10:00:00");
    EventLog log{{1, t0 + 300, "B", ObsType::T, 0, 10, 21},
                 {2, t0, "A", ObsType::O, 0, 10, 1},
                 {3, t0 + 60, "X", ObsType::O, 0, 11, 1},
                 {4, t0 + 100, "M", ObsType::P, 0, 10, 11}};
    const auto groups = group_by_train_day(log);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].key.train_number == 10);
    CHECK(groups[0].indices == std::vector<std::size_t>{1, 3, 0});
    CHECK(groups[1].indices == std::vector<std::size_t>{2});
}
