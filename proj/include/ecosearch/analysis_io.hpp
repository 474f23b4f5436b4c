#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ecosearch/analysis.hpp"
#include "ecosearch/csv.hpp"
#include "ecosearch/date.hpp"
#include "ecosearch/embedding_store.hpp"
#include "ecosearch/error.hpp"

// Adapters from exported CSV tables to the analysis inputs. When a table has a
// `marked` column only rows marked "true" count as evidence.

namespace ecosearch::analysis {

namespace detail {

inline std::vector<const csv::Row*> evidence_rows(const csv::Table& t) {
    auto marked = t.find_column("marked");
    std::vector<const csv::Row*> out;
    for (const auto& row : t.rows())
        if (!marked || row[*marked] == "true") out.push_back(&row);
    return out;
}

inline Date date_field(const csv::Row& row, std::size_t col, std::size_t record) {
    auto d = parse_date(row[col]);
    if (!d) throw error(errc::parse, "csv record " + std::to_string(record) + ": bad date '" + row[col] + "'");
    return *d;
}

} // namespace detail

inline CategoryCounts proportions_input(const csv::Table& t, std::string_view by_column) {
    auto col = t.column(by_column);
    CategoryCounts counts;
    for (const auto* row : detail::evidence_rows(t)) ++counts[(*row)[col]];
    return counts;
}

inline std::vector<MortalityRecord> mortality_records(const csv::Table& t) {
    auto date_col = t.column("observed_at");
    auto species_col = t.find_column("taxon_id");
    auto lat_col = t.find_column("latitude");
    auto lon_col = t.find_column("longitude");
    std::vector<MortalityRecord> out;
    std::size_t record = 1;
    for (const auto* row : detail::evidence_rows(t)) {
        ++record;
        MortalityRecord r;
        r.observed_at = detail::date_field(*row, date_col, record);
        if (species_col) {
            auto s = ecosearch::detail::parse_integer<std::uint32_t>((*row)[*species_col]);
            if (!s) throw error(errc::parse, "csv record " + std::to_string(record) + ": bad taxon_id");
            r.species = *s;
        }
        if (lat_col && lon_col && !(*row)[*lat_col].empty()) {
            auto lat = ecosearch::detail::parse_double((*row)[*lat_col]);
            auto lon = ecosearch::detail::parse_double((*row)[*lon_col]);
            if (!lat || !lon) throw error(errc::parse, "csv record " + std::to_string(record) + ": bad coordinates");
            r.location = GeoPoint{*lat, *lon};
        }
        out.push_back(r);
    }
    return out;
}

/// Deaths come from a verified "dead bird" export; observations from any table
/// with an `observed_at` column.
inline MonthlySeries mortality_input(const csv::Table& deaths, const csv::Table& observations, bool dedupe) {
    auto dead = mortality_records(deaths);
    if (dedupe) dead = deduplicate_mortality(dead);
    std::vector<Date> death_dates, obs_dates;
    for (const auto& r : dead) death_dates.push_back(r.observed_at);
    for (const auto& r : mortality_records(observations)) obs_dates.push_back(r.observed_at);
    return {monthly_counts(death_dates), monthly_counts(obs_dates)};
}

struct PhenologyInput {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> days; // day of year, evidence rows only
    std::vector<std::size_t> inspected;    // all rows per group
};

inline PhenologyInput phenology_input(const csv::Table& t, std::string_view date_column,
                                      std::string_view group_column) {
    auto date_col = t.column(date_column);
    auto group_col = t.column(group_column);
    auto marked = t.find_column("marked");
    std::map<std::string, std::size_t> slot;
    PhenologyInput in;
    std::size_t record = 1;
    for (const auto& row : t.rows()) {
        ++record;
        auto [it, fresh] = slot.emplace(row[group_col], in.labels.size());
        if (fresh) {
            in.labels.push_back(row[group_col]);
            in.days.emplace_back();
            in.inspected.push_back(0);
        }
        ++in.inspected[it->second];
        if (marked && row[*marked] != "true") continue;
        in.days[it->second].push_back(day_of_year(detail::date_field(row, date_col, record)));
    }
    return in;
}

/// Grid CSV: one raster row per line, comma-separated ordinals, no header.
inline CategoricalGrid parse_grid(std::string_view text, std::vector<std::string> categories, double cell_size) {
    auto rows = csv::parse(text);
    CategoricalGrid g;
    g.categories = std::move(categories);
    g.cell_size = cell_size;
    g.height = rows.size();
    g.width = rows.empty() ? 0 : rows.front().size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != g.width)
            throw error(errc::shape, "grid row " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size()) +
                                         " cells, expected " + std::to_string(g.width));
        for (const auto& cell : rows[r]) {
            auto v = ecosearch::detail::parse_integer<unsigned>(cell);
            if (!v || *v > 255) throw error(errc::parse, "grid row " + std::to_string(r + 1) + ": bad ordinal '" + cell + "'");
            g.cells.push_back(static_cast<std::uint8_t>(*v));
        }
    }
    validate(g);
    return g;
}

inline std::string format_grid(const CategoricalGrid& g) {
    std::string out;
    for (std::size_t r = 0; r < g.height; ++r) {
        for (std::size_t c = 0; c < g.width; ++c) {
            if (c) out += ',';
            out += std::to_string(g.at(r, c));
        }
        out += '\n';
    }
    return out;
}

} // namespace ecosearch::analysis
