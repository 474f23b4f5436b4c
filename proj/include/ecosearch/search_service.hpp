#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecosearch/catalog.hpp"
#include "ecosearch/encoder.hpp"
#include "ecosearch/error.hpp"
#include "ecosearch/metadata_index.hpp"
#include "ecosearch/session.hpp"

namespace ecosearch {

/// A result page entry as returned to clients: ranked hit plus mark flag.
struct PageEntry {
    ResultEntry hit;
    bool marked = false;
};

inline nlohmann::json to_json(const PageEntry& e) {
    auto j = to_json(e.hit);
    j["marked"] = e.marked;
    return j;
}

/// The query -> verify -> export loop over one catalog.
class SearchService {
  public:
    SearchService(std::shared_ptr<const Catalog> catalog, Encoder encoder, std::string session_dir = {},
                  std::size_t prefilter_threshold = default_prefilter_threshold)
        : catalog_(std::move(catalog)),
          encoder_(std::move(encoder)),
          sessions_(std::move(session_dir)),
          prefilter_threshold_(prefilter_threshold) {
        if (encoder_.backend().dim != catalog_->corpus().dim())
            throw error(errc::configuration, "encoder dim " + std::to_string(encoder_.backend().dim) +
                                                 " does not match corpus dim " +
                                                 std::to_string(catalog_->corpus().dim()));
    }

    const Catalog& catalog() const noexcept { return *catalog_; }

    std::string create_session() { return sessions_.create(catalog_->manifest().link_template); }

    Session session(const std::string& id) { return sessions_.get(id); }

    std::vector<PageEntry> run_query(const std::string& session_id, const std::string& text,
                                     const FilterSpec& spec, std::size_t k,
                                     std::optional<std::size_t> nprobe = std::nullopt) {
        if (k == 0) throw error(errc::domain, "k must be at least 1");
        validate(spec);
        std::size_t probe = nprobe.value_or(std::min<std::size_t>(catalog_->manifest().nprobe,
                                                                  catalog_->index().nlist()));
        // Fail fast on unknown sessions before calling the encoder.
        sessions_.with_session(session_id, [](Session&, auto&&) { return 0; });
        auto query = encode_text(encoder_, text);
        auto hits = filtered_search(catalog_->context(prefilter_threshold_), spec, query, k, probe);

        std::vector<ResultEntry> entries;
        entries.reserve(hits.size());
        const auto& corpus = catalog_->corpus();
        for (std::size_t i = 0; i < hits.size(); ++i) {
            const auto& rec = corpus.record(hits[i].vector_position);
            entries.push_back({rec.observation_id, static_cast<std::uint32_t>(i + 1), hits[i].score,
                               rec.taxon_path, rec.observed_at, rec.location, rec.image_url});
        }
        QueryRecord q{text, spec, k, probe, utc_timestamp()};

        return sessions_.with_session(session_id, [&](Session& s, auto&& log) {
            nlohmann::json results = nlohmann::json::array();
            for (const auto& e : entries) results.push_back(to_json(e));
            log({{"event", "query"},
                 {"query_text", q.query_text},
                 {"filters", filter_to_json(q.filters)},
                 {"k", q.k},
                 {"nprobe", q.nprobe},
                 {"at", q.at},
                 {"results", results}});
            s.queries.push_back(q);
            s.results = entries;
            for (const auto& e : entries) s.surfaced.insert(e.observation_id);
            return page_of(s);
        });
    }

    MarkState mark(const std::string& session_id, std::uint64_t observation_id, bool marked) {
        return sessions_.with_session(session_id, [&](Session& s, auto&& log) {
            if (!s.surfaced.contains(observation_id))
                throw error(errc::invalid_mark, "observation " + std::to_string(observation_id) +
                                                    " never appeared in session " + session_id);
            MarkState state{marked, utc_timestamp()};
            log({{"event", "mark"},
                 {"observation_id", observation_id},
                 {"marked", marked},
                 {"at", state.marked_at}});
            s.marks[observation_id] = state;
            return state;
        });
    }

    std::string export_csv(const std::string& session_id) {
        return sessions_.with_session(session_id,
                                      [](Session& s, auto&&) { return ecosearch::export_csv(s); });
    }

    nlohmann::json health() const {
        return {{"status", "ok"},
                {"corpus_size", catalog_->corpus().size()},
                {"dim", catalog_->corpus().dim()},
                {"nlist", catalog_->index().nlist()}};
    }

  private:
    static std::vector<PageEntry> page_of(const Session& s) {
        std::vector<PageEntry> page;
        page.reserve(s.results.size());
        for (const auto& e : s.results) page.push_back({e, s.is_marked(e.observation_id)});
        return page;
    }

    std::shared_ptr<const Catalog> catalog_;
    Encoder encoder_;
    SessionStore sessions_;
    std::size_t prefilter_threshold_;
};

} // namespace ecosearch
