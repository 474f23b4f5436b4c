#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "ecosearch/date.hpp"
#include "ecosearch/embedding_store.hpp"
#include "ecosearch/error.hpp"
#include "ecosearch/studentized_range_table.hpp"

namespace ecosearch::analysis {

// ---------------------------------------------------------------------------
// Proportions and return rates
// ---------------------------------------------------------------------------

using CategoryCounts = std::map<std::string, std::uint64_t>;

inline std::map<std::string, double> category_proportions(const CategoryCounts& counts) {
    std::uint64_t total = 0;
    for (const auto& [_, n] : counts) total += n;
    if (total == 0) throw error(errc::empty_denominator, "category counts sum to zero");
    std::map<std::string, double> out;
    for (const auto& [label, n] : counts) out[label] = static_cast<double>(n) / static_cast<double>(total);
    return out;
}

/// Fraction of inspected results that matched the queried concept.
inline double return_rate(std::uint64_t marked, std::uint64_t queried) {
    if (queried == 0) throw error(errc::domain, "queried count must be positive");
    if (marked > queried)
        throw error(errc::consistency, std::to_string(marked) + " marked exceeds " + std::to_string(queried) +
                                           " queried");
    return static_cast<double>(marked) / static_cast<double>(queried);
}

// ---------------------------------------------------------------------------
// Mortality index
// ---------------------------------------------------------------------------

struct MonthlySeries {
    std::array<std::uint64_t, 12> deaths{};
    std::array<std::uint64_t, 12> observations{};
};

struct IndexValue {
    enum class Kind { finite, neg_infinite, undefined };
    Kind kind = Kind::undefined;
    double value = 0.0; // meaningful only for finite

    static IndexValue finite(double v) { return {Kind::finite, v}; }
    static IndexValue neg_infinite() { return {Kind::neg_infinite, -std::numeric_limits<double>::infinity()}; }
    static IndexValue undefined() { return {Kind::undefined, std::numeric_limits<double>::quiet_NaN()}; }

    bool is_finite() const noexcept { return kind == Kind::finite; }
};

/// log2(rate_m / mean rate), where rate_m = deaths_m / observations_m and the
/// mean is the unweighted mean over months with observations. Months with no
/// observations are undefined; months with zero deaths are -infinity.
inline std::array<IndexValue, 12> mortality_index(const MonthlySeries& series) {
    std::array<std::optional<double>, 12> rates;
    double lowest = std::numeric_limits<double>::infinity(), highest = 0.0;
    int defined = 0;
    for (std::size_t m = 0; m < 12; ++m) {
        if (series.observations[m] == 0) continue;
        rates[m] = static_cast<double>(series.deaths[m]) / static_cast<double>(series.observations[m]);
        lowest = std::min(lowest, *rates[m]);
        highest = std::max(highest, *rates[m]);
        ++defined;
    }
    if (defined == 0 || highest == 0.0)
        throw error(errc::degenerate_series, "no month has both observations and deaths");
    // Offset from the smallest rate so equal rates give the rate itself.
    double excess = 0.0;
    for (const auto& r : rates)
        if (r) excess += *r - lowest;
    const double mean = lowest + excess / defined;
    std::array<IndexValue, 12> out;
    for (std::size_t m = 0; m < 12; ++m) {
        if (!rates[m]) out[m] = IndexValue::undefined();
        else if (*rates[m] == 0.0) out[m] = IndexValue::neg_infinite();
        else out[m] = IndexValue::finite(std::log2(*rates[m] / mean));
    }
    return out;
}

/// Mortality record as read from an export; duplicates share species, calendar
/// month and 0.01-degree-quantized coordinates.
struct MortalityRecord {
    std::uint32_t species = 0;
    Date observed_at;
    std::optional<GeoPoint> location;
};

inline std::vector<MortalityRecord> deduplicate_mortality(const std::vector<MortalityRecord>& records) {
    using Key = std::tuple<std::uint32_t, int, bool, double, double>;
    std::set<Key> seen;
    std::vector<MortalityRecord> out;
    for (const auto& r : records) {
        Key key{r.species, r.observed_at.month, r.location.has_value(),
                r.location ? quantize_coord(r.location->latitude) : 0.0,
                r.location ? quantize_coord(r.location->longitude) : 0.0};
        if (seen.insert(key).second) out.push_back(r);
    }
    return out;
}

inline std::array<std::uint64_t, 12> monthly_counts(const std::vector<Date>& dates) {
    std::array<std::uint64_t, 12> out{};
    for (const auto& d : dates) ++out[static_cast<std::size_t>(d.month - 1)];
    return out;
}

// ---------------------------------------------------------------------------
// Categorical grid aggregation
// ---------------------------------------------------------------------------

/// Row-major raster of category ordinals indexing into `categories`.
struct CategoricalGrid {
    std::size_t width = 0;
    std::size_t height = 0;
    double cell_size = 0.0; // degrees
    std::vector<std::string> categories;
    std::vector<std::uint8_t> cells;

    std::uint8_t at(std::size_t row, std::size_t col) const { return cells[row * width + col]; }

    friend bool operator==(const CategoricalGrid&, const CategoricalGrid&) = default;
};

/// MTBS burn-severity classes in ordinal order.
inline std::vector<std::string> burn_severity_categories() {
    return {"unburned-to-low", "low", "moderate", "high"};
}

inline void validate(const CategoricalGrid& g) {
    if (g.cells.size() != g.width * g.height)
        throw error(errc::shape, "grid has " + std::to_string(g.cells.size()) + " cells, expected " +
                                     std::to_string(g.width * g.height));
    for (auto c : g.cells)
        if (c >= g.categories.size())
            throw error(errc::range, "ordinal " + std::to_string(c) + " not in the category table");
}

/// Each output cell is the most common ordinal of its factor x factor input
/// block (ties to the lowest ordinal). Partial edge blocks use the cells they have.
inline CategoricalGrid aggregate_categorical_grid(const CategoricalGrid& grid, std::size_t factor) {
    if (factor == 0) throw error(errc::domain, "aggregation factor must be at least 1");
    validate(grid);
    CategoricalGrid out;
    out.width = (grid.width + factor - 1) / factor;
    out.height = (grid.height + factor - 1) / factor;
    out.cell_size = grid.cell_size * static_cast<double>(factor);
    out.categories = grid.categories;
    out.cells.resize(out.width * out.height);
    std::vector<std::size_t> tally(grid.categories.size());
    for (std::size_t br = 0; br < out.height; ++br) {
        for (std::size_t bc = 0; bc < out.width; ++bc) {
            std::fill(tally.begin(), tally.end(), 0);
            for (std::size_t r = br * factor; r < std::min(grid.height, (br + 1) * factor); ++r)
                for (std::size_t c = bc * factor; c < std::min(grid.width, (bc + 1) * factor); ++c)
                    ++tally[grid.at(r, c)];
            auto best = std::max_element(tally.begin(), tally.end()); // first maximum = lowest ordinal
            out.cells[br * out.width + bc] = static_cast<std::uint8_t>(best - tally.begin());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Phenology statistics
// ---------------------------------------------------------------------------

inline int day_of_year(const Date& d) {
    if (!is_valid(d)) throw error(errc::domain, "invalid date " + format_date(d));
    int day = d.day;
    for (int m = 1; m < d.month; ++m) day += days_in_month(d.year, m);
    return day;
}

namespace detail {

/// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300, eps = 1e-15;
    constexpr int max_iter = 10'000;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) return h;
    }
    throw error(errc::domain, "incomplete beta continued fraction did not converge");
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw error(errc::domain, "beta parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                       b * std::log1p(-x);
    double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(F > f) for an F(d1, d2) variable.
inline double f_survival(double f, double d1, double d2) {
    if (std::isinf(f)) return 0.0;
    if (f <= 0.0) return 1.0;
    return regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

struct AnovaResult {
    double f = 0.0;
    std::size_t df_between = 0;
    std::size_t df_within = 0;
    double p_value = 1.0;
    double ms_within = 0.0;
    bool f_infinite = false; // zero pooled within-group variance, nonzero between
};

namespace detail {

struct GroupSummary {
    std::vector<double> means;
    std::vector<std::size_t> sizes;
    double ss_between = 0.0;
    double ss_within = 0.0;
    std::size_t total = 0;
};

inline GroupSummary summarize(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw error(errc::domain, "at least 2 groups are required");
    GroupSummary s;
    double grand_sum = 0.0;
    for (const auto& g : groups) {
        if (g.size() < 2) throw error(errc::domain, "every group needs at least 2 values");
        double sum = 0.0;
        for (double v : g) {
            if (!std::isfinite(v)) throw error(errc::domain, "group values must be finite");
            sum += v;
        }
        s.means.push_back(sum / static_cast<double>(g.size()));
        s.sizes.push_back(g.size());
        s.total += g.size();
        grand_sum += sum;
    }
    double grand_mean = grand_sum / static_cast<double>(s.total);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        double diff = s.means[i] - grand_mean;
        s.ss_between += static_cast<double>(s.sizes[i]) * diff * diff;
        for (double v : groups[i]) s.ss_within += (v - s.means[i]) * (v - s.means[i]);
    }
    return s;
}

} // namespace detail

inline AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
    auto s = detail::summarize(groups);
    AnovaResult r;
    r.df_between = groups.size() - 1;
    r.df_within = s.total - groups.size();
    double ms_between = s.ss_between / static_cast<double>(r.df_between);
    r.ms_within = s.ss_within / static_cast<double>(r.df_within);
    if (s.ss_within == 0.0) {
        if (s.ss_between == 0.0) throw error(errc::domain, "all groups are constant and equal");
        r.f = std::numeric_limits<double>::infinity();
        r.f_infinite = true;
        r.p_value = 0.0;
        return r;
    }
    r.f = ms_between / r.ms_within;
    r.p_value = std::clamp(f_survival(r.f, static_cast<double>(r.df_between), static_cast<double>(r.df_within)),
                           0.0, 1.0);
    return r;
}

/// q(0.05; groups, df) from the embedded table, linear in 1/df between rows.
inline double studentized_range_critical(std::size_t groups, double df) {
    if (groups < 2 || groups > 10)
        throw error(errc::domain, "critical values are tabulated for 2..10 groups, got " + std::to_string(groups));
    if (!(df >= 2.0)) throw error(errc::domain, "critical values need df >= 2");
    const auto& dfs = detail::studentized_range_dfs;
    const auto& q = detail::studentized_range_q05;
    const std::size_t col = groups - 2;
    auto exact = std::find(dfs.begin(), dfs.end(), df);
    if (exact != dfs.end()) return q[static_cast<std::size_t>(exact - dfs.begin())][col];
    std::size_t hi = static_cast<std::size_t>(std::upper_bound(dfs.begin(), dfs.end(), df) - dfs.begin());
    double lo_inv = 1.0 / dfs[hi - 1];
    double hi_inv = hi < dfs.size() ? 1.0 / dfs[hi] : 0.0; // past the last row: df = infinity
    double t = (lo_inv - 1.0 / df) / (lo_inv - hi_inv);
    return q[hi - 1][col] + t * (q[hi][col] - q[hi - 1][col]);
}

struct TukeyPair {
    std::size_t first = 0;
    std::size_t second = 0;
    double mean_difference = 0.0;
    double q = 0.0;
    bool significant = false;
};

struct TukeyResult {
    double critical_q = 0.0;
    double ms_within = 0.0;
    std::size_t df_within = 0;
    std::vector<TukeyPair> pairs; // (i, j) with i < j, lexicographic
};

/// Tukey-Kramer pairwise comparisons at alpha = 0.05.
inline TukeyResult tukey_hsd(const std::vector<std::vector<double>>& groups) {
    auto s = detail::summarize(groups);
    if (s.ss_within == 0.0 && s.ss_between == 0.0)
        throw error(errc::domain, "all groups are constant and equal");
    TukeyResult r;
    r.df_within = s.total - groups.size();
    r.ms_within = s.ss_within / static_cast<double>(r.df_within);
    r.critical_q = studentized_range_critical(groups.size(), static_cast<double>(r.df_within));
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i + 1; j < groups.size(); ++j) {
            TukeyPair p{i, j, s.means[i] - s.means[j], 0.0, false};
            double diff = std::abs(p.mean_difference);
            double se = std::sqrt(r.ms_within / 2.0 * (1.0 / s.sizes[i] + 1.0 / s.sizes[j]));
            p.q = diff == 0.0 ? 0.0 : (se == 0.0 ? std::numeric_limits<double>::infinity() : diff / se);
            p.significant = p.q > r.critical_q;
            r.pairs.push_back(p);
        }
    }
    return r;
}

} // namespace ecosearch::analysis
