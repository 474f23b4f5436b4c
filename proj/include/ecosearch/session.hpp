#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "ecosearch/csv.hpp"
#include "ecosearch/date.hpp"
#include "ecosearch/embedding_store.hpp"
#include "ecosearch/error.hpp"
#include "ecosearch/metadata_index.hpp"

namespace ecosearch {

/// One ranked hit with the metadata joined from the corpus at query time.
struct ResultEntry {
    std::uint64_t observation_id = 0;
    std::uint32_t rank = 0; // 1-based
    float score = 0.0f;
    std::vector<std::uint32_t> taxon_path;
    Date observed_at;
    std::optional<GeoPoint> location;
    std::string image_url;
};

struct QueryRecord {
    std::string query_text;
    FilterSpec filters;
    std::size_t k = 0;
    std::size_t nprobe = 0;
    std::string at;
};

struct MarkState {
    bool marked = false;
    std::string marked_at;
};

struct Session {
    std::string session_id;
    std::string created_at;
    std::string link_template;
    std::vector<QueryRecord> queries;
    std::vector<ResultEntry> results; // latest page
    std::unordered_set<std::uint64_t> surfaced;
    std::map<std::uint64_t, MarkState> marks;

    bool is_marked(std::uint64_t id) const {
        auto it = marks.find(id);
        return it != marks.end() && it->second.marked;
    }
};

inline std::string utc_timestamp() {
    using namespace std::chrono;
    auto now = system_clock::now();
    auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    std::time_t t = system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03lldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(ms));
    return buf;
}

inline std::string observation_link(const std::string& link_template, std::uint64_t id) {
    std::string out = link_template;
    const std::string key = "{id}";
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos))
        out.replace(pos, key.size(), std::to_string(id));
    return out;
}

// --- JSON forms shared by the session log and the HTTP API -----------------

inline nlohmann::json to_json(const ResultEntry& e) {
    nlohmann::json j = {{"observation_id", e.observation_id},
                        {"rank", e.rank},
                        {"score", e.score},
                        {"taxon_path", e.taxon_path},
                        {"observed_at", format_date(e.observed_at)},
                        {"image_url", e.image_url}};
    if (e.location) {
        j["latitude"] = e.location->latitude;
        j["longitude"] = e.location->longitude;
    }
    return j;
}

inline ResultEntry result_entry_from_json(const nlohmann::json& j) {
    ResultEntry e;
    e.observation_id = j.at("observation_id").get<std::uint64_t>();
    e.rank = j.at("rank").get<std::uint32_t>();
    e.score = j.at("score").get<float>();
    e.taxon_path = j.at("taxon_path").get<std::vector<std::uint32_t>>();
    auto date = parse_date(j.at("observed_at").get<std::string>());
    if (!date) throw error(errc::parse, "bad observed_at in session log");
    e.observed_at = *date;
    if (j.contains("latitude"))
        e.location = GeoPoint{j.at("latitude").get<double>(), j.at("longitude").get<double>()};
    e.image_url = j.at("image_url").get<std::string>();
    return e;
}

namespace detail {

inline void apply_event(Session& s, const nlohmann::json& ev) {
    const auto kind = ev.at("event").get<std::string>();
    if (kind == "create") {
        s.session_id = ev.at("session_id").get<std::string>();
        s.created_at = ev.at("created_at").get<std::string>();
        s.link_template = ev.at("link_template").get<std::string>();
    } else if (kind == "query") {
        QueryRecord q;
        q.query_text = ev.at("query_text").get<std::string>();
        q.filters = filter_from_json(ev.at("filters"));
        q.k = ev.at("k").get<std::size_t>();
        q.nprobe = ev.at("nprobe").get<std::size_t>();
        q.at = ev.at("at").get<std::string>();
        s.queries.push_back(std::move(q));
        s.results.clear();
        for (const auto& r : ev.at("results")) {
            s.results.push_back(result_entry_from_json(r));
            s.surfaced.insert(s.results.back().observation_id);
        }
    } else if (kind == "mark") {
        s.marks[ev.at("observation_id").get<std::uint64_t>()] =
            MarkState{ev.at("marked").get<bool>(), ev.at("at").get<std::string>()};
    } else {
        throw error(errc::parse, "unknown session event '" + kind + "'");
    }
}

} // namespace detail

/// Sessions keyed by id. When constructed with a directory every mutation is
/// appended to `<dir>/<session_id>.jsonl` before it becomes visible, and
/// sessions absent from memory are replayed from their log on first access.
/// Each session is guarded by its own mutex; distinct sessions never contend.
class SessionStore {
  public:
    explicit SessionStore(std::string log_dir = {}) : dir_(std::move(log_dir)) {
        if (!dir_.empty()) std::filesystem::create_directories(dir_);
    }

    std::string create(const std::string& link_template) {
        auto slot = std::make_shared<Slot>();
        slot->session.session_id = new_session_id();
        slot->session.created_at = utc_timestamp();
        slot->session.link_template = link_template;
        append(slot->session.session_id, {{"event", "create"},
                                          {"session_id", slot->session.session_id},
                                          {"created_at", slot->session.created_at},
                                          {"link_template", link_template}});
        std::unique_lock lock(map_mutex_);
        auto id = slot->session.session_id;
        sessions_.emplace(id, std::move(slot));
        return id;
    }

    /// Runs `fn(Session&, log)` with the session locked. `log(event)` persists
    /// an event; `fn` must call it before mutating the session.
    template <class Fn> auto with_session(const std::string& id, Fn&& fn) {
        auto slot = find(id);
        std::lock_guard lock(slot->mutex);
        auto log = [&](const nlohmann::json& ev) { append(id, ev); };
        return fn(slot->session, log);
    }

    /// Snapshot copy of a session.
    Session get(const std::string& id) {
        auto slot = find(id);
        std::lock_guard lock(slot->mutex);
        return slot->session;
    }

    /// Replays a session log without a store.
    static Session load_log(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw error(errc::not_found, "no session log at " + path);
        Session s;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                detail::apply_event(s, nlohmann::json::parse(line));
            } catch (const nlohmann::json::exception& e) {
                throw error(errc::parse, path + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        if (s.session_id.empty()) throw error(errc::parse, path + ": missing create event");
        return s;
    }

    static std::string log_path(const std::string& dir, const std::string& id) {
        return (std::filesystem::path(dir) / (id + ".jsonl")).string();
    }

  private:
    struct Slot {
        std::mutex mutex;
        Session session;
    };

    static bool valid_id(const std::string& id) {
        if (id.empty() || id.size() > 64) return false;
        for (char c : id)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
        return true;
    }

    std::shared_ptr<Slot> find(const std::string& id) {
        {
            std::shared_lock lock(map_mutex_);
            auto it = sessions_.find(id);
            if (it != sessions_.end()) return it->second;
        }
        if (dir_.empty() || !valid_id(id) || !std::filesystem::exists(log_path(dir_, id)))
            throw error(errc::not_found, "unknown session '" + id + "'");
        auto slot = std::make_shared<Slot>();
        slot->session = load_log(log_path(dir_, id));
        std::unique_lock lock(map_mutex_);
        return sessions_.emplace(id, std::move(slot)).first->second;
    }

    void append(const std::string& id, const nlohmann::json& ev) {
        if (dir_.empty()) return;
        std::ofstream out(log_path(dir_, id), std::ios::app);
        out << ev.dump() << '\n';
        out.flush();
        if (!out) throw error(errc::io, "cannot append to session log for " + id);
    }

    std::string new_session_id() {
        std::lock_guard lock(rng_mutex_);
        char buf[33];
        std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(rng_()),
                      static_cast<unsigned long long>(rng_()));
        return buf;
    }

    std::string dir_;
    std::shared_mutex map_mutex_;
    std::unordered_map<std::string, std::shared_ptr<Slot>> sessions_;
    std::mutex rng_mutex_;
    std::mt19937_64 rng_{std::random_device{}()};
};

inline const csv::Row& export_header() {
    static const csv::Row header = {"observation_id", "marked",      "rank",      "score",
                                    "taxon_id",       "observed_at", "latitude",  "longitude",
                                    "image_url",      "observation_link"};
    return header;
}

/// One CSV row per hit of the latest result page, with the current mark state.
inline std::string export_csv(const Session& s) {
    if (s.queries.empty()) throw error(errc::empty_export, "session " + s.session_id + " has no results");
    std::vector<csv::Row> rows{export_header()};
    for (const auto& e : s.results) {
        rows.push_back({std::to_string(e.observation_id),
                        s.is_marked(e.observation_id) ? "true" : "false",
                        std::to_string(e.rank),
                        detail::format_float(e.score),
                        std::to_string(e.taxon_path.back()),
                        format_date(e.observed_at),
                        e.location ? detail::format_double(e.location->latitude) : "",
                        e.location ? detail::format_double(e.location->longitude) : "",
                        e.image_url,
                        observation_link(s.link_template, e.observation_id)});
    }
    return csv::write(rows);
}

} // namespace ecosearch
