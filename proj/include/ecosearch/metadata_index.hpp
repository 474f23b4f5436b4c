#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "ecosearch/embedding_store.hpp"
#include "ecosearch/error.hpp"
#include "ecosearch/ivf_index.hpp"

namespace ecosearch {

struct GeoBox {
    double lat_min = -90.0;
    double lat_max = 90.0;
    double lon_min = -180.0;
    double lon_max = 180.0;

    /// Inclusive on every edge; no antimeridian wrap.
    bool contains(const GeoPoint& p) const noexcept {
        return p.latitude >= lat_min && p.latitude <= lat_max && p.longitude >= lon_min &&
               p.longitude <= lon_max;
    }

    friend bool operator==(const GeoBox&, const GeoBox&) = default;
};

/// Conjunction of optional taxon, month-set and bounding-box predicates.
struct FilterSpec {
    std::optional<std::uint32_t> taxon;
    std::optional<std::vector<int>> months; // calendar months 1..12
    std::optional<GeoBox> geo_box;

    bool empty() const noexcept { return !taxon && !months && !geo_box; }

    friend bool operator==(const FilterSpec&, const FilterSpec&) = default;
};

inline void validate(const FilterSpec& spec) {
    if (spec.months) {
        if (spec.months->empty()) throw error(errc::domain, "months filter must not be empty");
        for (int m : *spec.months)
            if (m < 1 || m > 12) throw error(errc::domain, "month " + std::to_string(m) + " outside 1..12");
    }
    if (spec.geo_box) {
        const auto& b = *spec.geo_box;
        auto in = [](double v, double lim) { return v >= -lim && v <= lim; };
        if (!in(b.lat_min, 90) || !in(b.lat_max, 90) || !in(b.lon_min, 180) || !in(b.lon_max, 180))
            throw error(errc::range, "geo box bounds outside coordinate ranges");
        if (b.lat_min > b.lat_max || b.lon_min > b.lon_max)
            throw error(errc::domain, "geo box requires lat_min <= lat_max and lon_min <= lon_max");
    }
}

inline bool eval_filter(const FilterSpec& spec, const ObservationRecord& rec) {
    if (spec.taxon &&
        std::find(rec.taxon_path.begin(), rec.taxon_path.end(), *spec.taxon) == rec.taxon_path.end())
        return false;
    if (spec.months &&
        std::find(spec.months->begin(), spec.months->end(), rec.observed_at.month) == spec.months->end())
        return false;
    if (spec.geo_box && (!rec.location || !spec.geo_box->contains(*rec.location))) return false;
    return true;
}

using PostingList = std::vector<std::uint32_t>;

/// taxon id -> ascending positions whose lineage contains it.
class TaxonIndex {
  public:
    const PostingList* find(std::uint32_t taxon) const {
        auto it = postings_.find(taxon);
        return it == postings_.end() ? nullptr : &it->second;
    }
    std::size_t taxon_count() const noexcept { return postings_.size(); }
    const std::unordered_map<std::uint32_t, PostingList>& postings() const noexcept { return postings_; }

  private:
    friend TaxonIndex build_taxon_index(const Corpus&);
    std::unordered_map<std::uint32_t, PostingList> postings_;
};

inline TaxonIndex build_taxon_index(const Corpus& corpus) {
    TaxonIndex ix;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (auto taxon : corpus.record(i).taxon_path)
            ix.postings_[taxon].push_back(static_cast<std::uint32_t>(i));
    return ix;
}

class MonthIndex {
  public:
    const PostingList& month(int m) const { return months_.at(static_cast<std::size_t>(m - 1)); }

  private:
    friend MonthIndex build_month_index(const Corpus&);
    std::array<PostingList, 12> months_;
};

inline MonthIndex build_month_index(const Corpus& corpus) {
    MonthIndex ix;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        ix.months_[static_cast<std::size_t>(corpus.record(i).observed_at.month - 1)].push_back(
            static_cast<std::uint32_t>(i));
    return ix;
}

namespace detail {

inline PostingList intersect(const PostingList& a, const PostingList& b) {
    PostingList out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline PostingList merge_months(const MonthIndex& ix, const std::vector<int>& months) {
    std::array<bool, 13> seen{};
    PostingList out;
    for (int m : months) {
        if (seen[static_cast<std::size_t>(m)]) continue;
        seen[static_cast<std::size_t>(m)] = true;
        PostingList merged;
        const auto& list = ix.month(m);
        std::merge(out.begin(), out.end(), list.begin(), list.end(), std::back_inserter(merged));
        out.swap(merged);
    }
    return out;
}

} // namespace detail

/// Ascending positions satisfying `spec`: taxon and month via posting lists,
/// geography by scanning what survives.
inline PostingList candidate_set(const FilterSpec& spec, const TaxonIndex& taxa, const MonthIndex& months,
                                 const Corpus& corpus) {
    validate(spec);
    std::optional<PostingList> current;
    if (spec.taxon) {
        const PostingList* list = taxa.find(*spec.taxon);
        if (list == nullptr) return {};
        current = *list;
    }
    if (spec.months) {
        PostingList by_month = detail::merge_months(months, *spec.months);
        current = current ? detail::intersect(*current, by_month) : std::move(by_month);
    }
    if (!current) {
        current.emplace(corpus.size());
        for (std::size_t i = 0; i < corpus.size(); ++i) (*current)[i] = static_cast<std::uint32_t>(i);
    }
    if (spec.geo_box) {
        std::erase_if(*current, [&](std::uint32_t pos) {
            const auto& loc = corpus.record(pos).location;
            return !loc || !spec.geo_box->contains(*loc);
        });
    }
    return std::move(*current);
}

inline constexpr std::size_t default_prefilter_threshold = 100'000;

/// Everything a filtered search reads; all members are immutable after load.
struct SearchContext {
    const IvfIndex& index;
    const Corpus& corpus;
    const TaxonIndex& taxa;
    const MonthIndex& months;
    std::size_t prefilter_threshold = default_prefilter_threshold;
};

/// Small candidate sets are scored exactly; larger ones run the IVF scan with
/// a membership test, doubling nprobe until k hits are accepted or every list
/// has been scanned.
inline std::vector<SearchHit> filtered_search(const SearchContext& ctx, const FilterSpec& spec,
                                              std::span<const float> query, std::size_t k,
                                              std::size_t nprobe) {
    const auto& index = ctx.index;
    detail::check_query(query, index.dim(), k);
    if (nprobe < 1 || nprobe > index.nlist())
        throw error(errc::domain, "nprobe " + std::to_string(nprobe) + " outside [1, " +
                                      std::to_string(index.nlist()) + "]");
    const bool unfiltered = spec.empty();
    PostingList candidates;
    if (!unfiltered) candidates = candidate_set(spec, ctx.taxa, ctx.months, ctx.corpus);
    const std::size_t candidate_count = unfiltered ? ctx.corpus.size() : candidates.size();
    if (candidate_count <= ctx.prefilter_threshold)
        return unfiltered ? brute_force_search(ctx.corpus, query, k)
                          : brute_force_search(ctx.corpus, query, k, candidates);

    std::vector<bool> member(unfiltered ? 0 : ctx.corpus.size(), false);
    for (auto pos : candidates) member[pos] = true;
    auto ids = ctx.corpus.ids();
    detail::check_ids(ids, index.total_vectors());

    auto order = index.probe_order(query, index.nlist());
    TopK top(k);
    std::size_t scanned = 0, accepted = 0;
    while (true) {
        for (; scanned < nprobe; ++scanned)
            index.scan_list(order[scanned], query, [&](std::uint32_t pos, float score) {
                if (!unfiltered && !member[pos]) return;
                ++accepted;
                top.push({pos, ids[pos], score});
            });
        if (accepted >= k || nprobe == index.nlist()) break;
        nprobe = std::min(nprobe * 2, index.nlist());
    }
    return std::move(top).take_sorted();
}

// JSON form used in API requests:
//   {"taxon_id": 3, "months": [6,7,8], "geo": {"lat_min":..,"lat_max":..,"lon_min":..,"lon_max":..}}

inline FilterSpec filter_from_json(const nlohmann::json& j) {
    FilterSpec spec;
    if (j.is_null()) return spec;
    if (!j.is_object()) throw error(errc::parse, "filters must be a JSON object");
    try {
        if (j.contains("taxon_id") && !j["taxon_id"].is_null()) {
            const auto& t = j["taxon_id"];
            if (!t.is_number_unsigned()) throw error(errc::parse, "taxon_id must be a non-negative integer");
            spec.taxon = t.get<std::uint32_t>();
        }
        if (j.contains("months") && !j["months"].is_null()) {
            if (!j["months"].is_array()) throw error(errc::parse, "months must be an array");
            std::vector<int> months;
            for (const auto& m : j["months"]) {
                if (!m.is_number_integer()) throw error(errc::parse, "months must hold integers");
                months.push_back(m.get<int>());
            }
            spec.months = std::move(months);
        }
        if (j.contains("geo") && !j["geo"].is_null()) {
            const auto& g = j["geo"];
            GeoBox b;
            b.lat_min = g.at("lat_min").get<double>();
            b.lat_max = g.at("lat_max").get<double>();
            b.lon_min = g.at("lon_min").get<double>();
            b.lon_max = g.at("lon_max").get<double>();
            spec.geo_box = b;
        }
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse, std::string("bad filters: ") + e.what());
    }
    validate(spec);
    return spec;
}

inline nlohmann::json filter_to_json(const FilterSpec& spec) {
    nlohmann::json j = nlohmann::json::object();
    if (spec.taxon) j["taxon_id"] = *spec.taxon;
    if (spec.months) j["months"] = *spec.months;
    if (spec.geo_box)
        j["geo"] = {{"lat_min", spec.geo_box->lat_min},
                    {"lat_max", spec.geo_box->lat_max},
                    {"lon_min", spec.geo_box->lon_min},
                    {"lon_max", spec.geo_box->lon_max}};
    return j;
}

} // namespace ecosearch
