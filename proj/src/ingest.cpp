#include "delayprop/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include <nlohmann/json.hpp>

#include "delayprop/errors.hpp"
#include "delayprop/simgen.hpp"

namespace delayprop {

using nlohmann::json;

EventLog clean_events(const EventLog& raw, CleanReport* report) {
    CleanReport local;
    local.input_rows = raw.size();
    EventLog work = raw;

    for (const auto& group : group_by_train_day(work)) {
        std::vector<std::size_t> idx = group.indices;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const auto& x = work[a];
            const auto& y = work[b];
            return std::tie(x.time, x.rank, x.type, x.id) < std::tie(y.time, y.rank, y.type, y.id);
        });
        std::vector<int> ranks;
        for (const std::size_t i : idx) {
            if (work[i].rank) ranks.push_back(*work[i].rank);
        }
        std::sort(ranks.begin(), ranks.end());
        std::size_t next = 0;
        bool changed = false;
        for (const std::size_t i : idx) {
            if (!work[i].rank) continue;
            if (*work[i].rank != ranks[next]) {
                ++local.ranks_reordered;
                changed = true;
                work[i].rank = ranks[next];
            }
            ++next;
        }
        if (changed) ++local.groups_reordered;
    }

    using Key = std::tuple<std::int64_t, std::int64_t, std::optional<int>, ObsType, std::string>;
    std::map<Key, std::size_t> keep;
    for (std::size_t i = 0; i < work.size(); ++i) {
        const auto& ev = work[i];
        const Key key{day_index(ev.time), ev.train_number, ev.rank, ev.type, ev.rp};
        auto [it, inserted] = keep.try_emplace(key, i);
        if (!inserted && ev.id < work[it->second].id) it->second = i;
    }
    EventLog out;
    out.reserve(keep.size());
    for (const auto& [key, i] : keep) out.push_back(work[i]);
    local.duplicates_removed = work.size() - out.size();
    sort_canonical(out);
    if (report) *report = local;
    return out;
}

const PlannedRun* PlanView::find(std::int64_t train_number) const {
    const auto it = std::lower_bound(runs.begin(), runs.end(), train_number,
                                     [](const PlannedRun& r, std::int64_t n) { return r.train_number < n; });
    return it != runs.end() && it->train_number == train_number ? &*it : nullptr;
}

namespace {

bool plan_entry_less(const PlanEntry& a, const PlanEntry& b) {
    return std::tie(a.rank, a.scheduled, a.type, a.event_id) < std::tie(b.rank, b.scheduled, b.type, b.event_id);
}

}  // namespace

PlanView plan_view_from_events(const EventLog& cleaned, std::int64_t day) {
    PlanView view;
    view.day = day;
    for (const auto& group : group_by_train_day(cleaned)) {
        if (group.key.day != day) continue;
        PlannedRun run;
        run.train_number = group.key.train_number;
        for (const std::size_t i : group.indices) {
            const auto& ev = cleaned[i];
            run.entries.push_back({ev.rp, ev.type, ev.theoretical_time(), ev.rank.value_or(-1), ev.delay, ev.id});
        }
        // scheduled times, unlike observed ones, are known before t0
        std::stable_sort(run.entries.begin(), run.entries.end(), plan_entry_less);
        view.runs.push_back(std::move(run));
    }
    std::sort(view.runs.begin(), view.runs.end(),
              [](const auto& a, const auto& b) { return a.train_number < b.train_number; });
    return view;
}

PlanView plan_view_from_schedule(const sim::CirculationPlan& plan, std::int64_t day, const EventLog& cleaned) {
    using Key = std::tuple<std::int64_t, int, ObsType, std::string>;
    std::map<Key, const ObservationEvent*> realized;
    for (const auto& ev : cleaned) {
        if (day_index(ev.time) == day) realized[{ev.train_number, ev.rank.value_or(-1), ev.type, ev.rp}] = &ev;
    }
    PlanView view;
    view.day = day;
    const Timestamp base = day_start(day);
    for (const auto* svc : plan.running_on(day)) {
        PlannedRun run;
        run.train_number = svc->train_number;
        for (const auto& e : svc->itinerary) {
            PlanEntry entry;
            entry.rp = e.rp;
            entry.type = e.type;
            entry.rank = e.rank;
            entry.scheduled = base + static_cast<Timestamp>(std::llround((svc->departure_minute + e.offset_minutes) * 60.0));
            if (const auto it = realized.find({svc->train_number, e.rank, e.type, e.rp}); it != realized.end()) {
                entry.realized_delay = it->second->delay;
                entry.event_id = it->second->id;
            }
            run.entries.push_back(std::move(entry));
        }
        view.runs.push_back(std::move(run));
    }
    std::sort(view.runs.begin(), view.runs.end(),
              [](const auto& a, const auto& b) { return a.train_number < b.train_number; });
    return view;
}

bool TrainToken::departed() const {
    return !past.empty() && past.back().type.has_value();
}

Snapshot build_snapshot(const EventLog& cleaned, const PlanView& plan, Timestamp t0, const SnapshotParams& params) {
    if (params.n_prev < 1 || params.n_foll < 1) throw ConfigError("n_prev and n_foll must be >= 1");
    if (params.h_arr_minutes < 0 || params.h_dep_minutes < 0) throw ConfigError("horizons must be >= 0");

    Snapshot snap;
    snap.t0 = t0;
    snap.exogenous.day_of_week = day_of_week(day_index(t0));
    snap.exogenous.minute_of_day = minute_of_day(t0);
    if (day_index(t0) != plan.day || plan.runs.empty()) {
        snap.warning = "no data covers " + format_timestamp(t0);
        return snap;
    }

    std::map<std::int64_t, std::vector<const ObservationEvent*>> observed;
    for (const auto& ev : cleaned) {
        if (ev.time <= t0 && day_index(ev.time) == plan.day) observed[ev.train_number].push_back(&ev);
    }
    const double h_arr = params.h_arr_minutes * 60.0;
    const double h_dep = params.h_dep_minutes * 60.0;
    const auto n_prev = static_cast<std::size_t>(params.n_prev);
    const auto n_foll = static_cast<std::size_t>(params.n_foll);

    for (const auto& run : plan.runs) {
        if (run.entries.empty()) continue;
        const bool excluded = std::any_of(params.excluded_numbers.begin(), params.excluded_numbers.end(),
                                          [&](const auto& r) { return run.train_number >= r.first && run.train_number < r.second; });
        if (excluded) continue;

        std::vector<const ObservationEvent*> seen;
        if (const auto it = observed.find(run.train_number); it != observed.end()) seen = it->second;
        std::sort(seen.begin(), seen.end(), [](const auto* a, const auto* b) {
            return std::tie(a->time, a->rank, a->type, a->id) < std::tie(b->time, b->rank, b->type, b->id);
        });
        const int translation = seen.empty() ? 0 : seen.back()->delay;

        // inclusion horizons
        const auto terminus = std::find_if(seen.rbegin(), seen.rend(), [](const auto* e) { return e->type == ObsType::T; });
        if (terminus != seen.rend()) {
            if (static_cast<double>(t0 - (*terminus)->time) > h_arr) continue;
        } else {
            const double expected_end = static_cast<double>(run.entries.back().scheduled) + 60.0 * translation;
            if (expected_end < static_cast<double>(t0) - h_arr) continue;
            if (seen.empty() && static_cast<double>(run.entries.front().scheduled) > static_cast<double>(t0) + h_dep) continue;
        }

        // last plan entry already observed
        std::ptrdiff_t last = -1;
        for (std::size_t k = 0; k < run.entries.size(); ++k) {
            const auto& e = run.entries[k];
            for (const auto* ev : seen) {
                if (ev->rp == e.rp && ev->type == e.type && ev->rank.value_or(-1) == e.rank) {
                    last = static_cast<std::ptrdiff_t>(k);
                    break;
                }
            }
        }

        TrainToken tok;
        tok.train_number = run.train_number;
        tok.category = category_of(run.train_number);
        tok.translation_delay = translation;
        const std::size_t take = std::min(n_prev, seen.size());
        for (std::size_t k = take; k < n_prev; ++k) tok.past.push_back({kPreDeparture, 0.0, 0, std::nullopt});
        for (std::size_t k = seen.size() - take; k < seen.size(); ++k) {
            const auto* ev = seen[k];
            tok.past.push_back({ev->rp, static_cast<double>(t0 - ev->time) / 60.0, ev->delay, ev->type});
        }
        for (std::size_t k = static_cast<std::size_t>(last + 1); k < run.entries.size() && tok.future.size() < n_foll; ++k) {
            const auto& e = run.entries[k];
            tok.future.push_back({e.rp, static_cast<double>(e.scheduled - t0) / 60.0, e.type, e.scheduled});
            tok.targets.push_back(e.realized_delay ? static_cast<double>(*e.realized_delay) : 0.0);
            tok.target_mask.push_back(e.realized_delay ? 1 : 0);
        }
        while (tok.future.size() < n_foll) {
            tok.future.push_back({kPostArrival, 0.0, std::nullopt, 0});
            tok.targets.push_back(0.0);
            tok.target_mask.push_back(0);
        }
        snap.tokens.push_back(std::move(tok));
    }
    snap.exogenous.n_trains = static_cast<int>(snap.tokens.size());
    return snap;
}

std::vector<Timestamp> snapshot_schedule(std::int64_t day, double spacing_minutes) {
    if (!(spacing_minutes > 0.0)) throw ConfigError("snapshot spacing must be > 0");
    const Timestamp first = day_start(day) + 6 * 3600;
    const Timestamp last = day_start(day) + 23 * 3600;
    std::vector<Timestamp> out;
    for (std::int64_t k = 0;; ++k) {
        const auto t = first + static_cast<Timestamp>(std::llround(static_cast<double>(k) * spacing_minutes * 60.0));
        if (t > last) break;
        out.push_back(t);
    }
    return out;
}

namespace {

json type_json(const std::optional<ObsType>& t) {
    return t ? json(std::string(1, to_char(*t))) : json(nullptr);
}

std::optional<ObsType> type_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    const auto s = j.get<std::string>();
    if (s.size() != 1) throw DataError("bad observation type '" + s + "'");
    return obs_type_from_char(s[0]);
}

TrainCategory category_from_string(const std::string& s) {
    for (int c = 0; c < kTrainCategoryCount; ++c) {
        if (to_string(static_cast<TrainCategory>(c)) == s) return static_cast<TrainCategory>(c);
    }
    throw DataError("unknown train category '" + s + "'");
}

}  // namespace

json to_json(const Snapshot& snap, bool with_targets) {
    json tokens = json::array();
    for (const auto& tok : snap.tokens) {
        json past = json::array();
        for (const auto& p : tok.past) {
            past.push_back({{"rp", p.rp}, {"minutes_since", p.minutes_since}, {"delay", p.delay}, {"type", type_json(p.type)}});
        }
        json future = json::array();
        for (const auto& f : tok.future) {
            future.push_back({{"rp", f.rp},
                              {"minutes_until", f.minutes_until},
                              {"type", type_json(f.type)},
                              {"scheduled", f.type ? json(format_timestamp(f.scheduled)) : json(nullptr)}});
        }
        json t{{"train", tok.train_number},
               {"category", std::string(to_string(tok.category))},
               {"translation_delay", tok.translation_delay},
               {"past", past},
               {"future", future}};
        if (with_targets) {
            t["targets"] = tok.targets;
            t["target_mask"] = tok.target_mask;
        }
        tokens.push_back(std::move(t));
    }
    json out{{"t0", format_timestamp(snap.t0)},
             {"exogenous",
              {{"day_of_week", snap.exogenous.day_of_week},
               {"minute_of_day", snap.exogenous.minute_of_day},
               {"n_trains", snap.exogenous.n_trains}}},
             {"tokens", tokens}};
    if (!snap.warning.empty()) out["warning"] = snap.warning;
    return out;
}

Snapshot snapshot_from_json(const json& j) {
    try {
        Snapshot snap;
        snap.t0 = parse_timestamp(j.at("t0").get<std::string>());
        const auto& ex = j.at("exogenous");
        snap.exogenous = {ex.at("day_of_week").get<int>(), ex.at("minute_of_day").get<double>(), ex.at("n_trains").get<int>()};
        snap.warning = j.value("warning", std::string{});
        for (const auto& t : j.at("tokens")) {
            TrainToken tok;
            tok.train_number = t.at("train").get<std::int64_t>();
            tok.category = category_from_string(t.at("category").get<std::string>());
            tok.translation_delay = t.at("translation_delay").get<int>();
            for (const auto& p : t.at("past")) {
                tok.past.push_back({p.at("rp").get<std::string>(), p.at("minutes_since").get<double>(),
                                    p.at("delay").get<int>(), type_from_json(p.at("type"))});
            }
            for (const auto& f : t.at("future")) {
                FutureEntry e{f.at("rp").get<std::string>(), f.at("minutes_until").get<double>(), type_from_json(f.at("type")), 0};
                if (!f.at("scheduled").is_null()) e.scheduled = parse_timestamp(f.at("scheduled").get<std::string>());
                tok.future.push_back(std::move(e));
            }
            if (t.contains("targets")) {
                tok.targets = t.at("targets").get<std::vector<double>>();
                tok.target_mask = t.at("target_mask").get<std::vector<std::uint8_t>>();
            } else {
                tok.targets.assign(tok.future.size(), 0.0);
                tok.target_mask.assign(tok.future.size(), 0);
            }
            snap.tokens.push_back(std::move(tok));
        }
        return snap;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed snapshot JSON: ") + e.what());
    }
}

}  // namespace delayprop
