#include "delayprop/events.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "delayprop/errors.hpp"

namespace delayprop {

char to_char(ObsType type) {
    static constexpr char kChars[] = {'O', 'T', 'P', 'A', 'D'};
    return kChars[static_cast<int>(type)];
}

ObsType obs_type_from_char(char c) {
    switch (c) {
        case 'O': return ObsType::O;
        case 'T': return ObsType::T;
        case 'P': return ObsType::P;
        case 'A': return ObsType::A;
        case 'D': return ObsType::D;
        default: throw DataError(std::string("unknown observation type '") + c + "'");
    }
}

TrainCategory category_of(std::int64_t n) {
    if (n >= 1 && n < 10000) return TrainCategory::high_speed;
    if (n >= 10000 && n < 30000) return TrainCategory::regional;
    if (n >= 30000 && n < 100000) return TrainCategory::freight;
    if (n >= 800000 && n < 900000) return TrainCategory::regional;
    return TrainCategory::undefined;
}

bool is_passenger(TrainCategory category) {
    return category == TrainCategory::high_speed || category == TrainCategory::regional;
}

std::string_view to_string(TrainCategory category) {
    switch (category) {
        case TrainCategory::high_speed: return "high-speed";
        case TrainCategory::regional: return "regional";
        case TrainCategory::freight: return "freight";
        default: return "undefined";
    }
}

void sort_canonical(EventLog& events) {
    std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
        return a.time != b.time ? a.time < b.time : a.id < b.id;
    });
}

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

EventLog read_events_csv(std::istream& in, CsvReadReport* report) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("events CSV: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool has_rank = false;
    if (line == "id,time,rp,type,delay,trainNum,rank") {
        has_rank = true;
    } else if (line != "id,time,rp,type,delay,trainNum") {
        throw DataError("events CSV: unexpected header '" + line + "'");
    }

    EventLog events;
    CsvReadReport local;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++local.rows;
        const auto fields = split(line, ',');
        const std::size_t expected = has_rank ? 7 : 6;
        ObservationEvent ev;
        bool ok = fields.size() == expected && parse_int(fields[0], ev.id) &&
                  fields[3].size() == 1 && parse_int(fields[4], ev.delay) &&
                  parse_int(fields[5], ev.train_number) && !fields[2].empty();
        if (ok) {
            try {
                ev.time = parse_timestamp(fields[1]);
                ev.type = obs_type_from_char(fields[3][0]);
            } catch (const DataError&) {
                ok = false;
            }
        }
        if (ok) {
            ev.rp = std::string(fields[2]);
            if (has_rank && !fields[6].empty()) {
                int rank = 0;
                if (parse_int(fields[6], rank)) {
                    ev.rank = rank;
                } else {
                    ok = false;
                }
            }
        }
        if (!ok) {
            ++local.malformed;
            continue;
        }
        events.push_back(std::move(ev));
    }
    if (report) *report = local;
    return events;
}

EventLog read_events_csv_file(const std::string& path, CsvReadReport* report) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open events file: " + path);
    return read_events_csv(in, report);
}

void write_events_csv(std::ostream& out, const EventLog& events, bool with_rank) {
    out << (with_rank ? "id,time,rp,type,delay,trainNum,rank\n" : "id,time,rp,type,delay,trainNum\n");
    for (const auto& ev : events) {
        out << ev.id << ',' << format_timestamp(ev.time) << ',' << ev.rp << ',' << to_char(ev.type)
            << ',' << ev.delay << ',' << ev.train_number;
        if (with_rank) {
            out << ',';
            if (ev.rank) out << *ev.rank;
        }
        out << '\n';
    }
}

void write_events_csv_file(const std::string& path, const EventLog& events, bool with_rank) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write events file: " + path);
    write_events_csv(out, events, with_rank);
}

}  // namespace delayprop

namespace delayprop {

bool itinerary_less(const ObservationEvent& a, const ObservationEvent& b) {
    if (a.rank && b.rank && *a.rank != *b.rank) return *a.rank < *b.rank;
    if (a.time != b.time) return a.time < b.time;
    if (a.type != b.type) return a.type < b.type;
    return a.id < b.id;
}

std::vector<TrainDayGroup> group_by_train_day(const EventLog& events) {
    std::vector<std::size_t> order(events.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto key_of = [&](std::size_t i) {
        return TrainDayKey{day_index(events[i].time), events[i].train_number};
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto ka = key_of(a);
        const auto kb = key_of(b);
        if (ka != kb) return ka < kb;
        return itinerary_less(events[a], events[b]);
    });
    std::vector<TrainDayGroup> groups;
    for (const std::size_t i : order) {
        const auto key = key_of(i);
        if (groups.empty() || groups.back().key != key) groups.push_back({key, {}});
        groups.back().indices.push_back(i);
    }
    return groups;
}

}  // namespace delayprop
