#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ecosearch/analysis.hpp"
#include "ecosearch/analysis_io.hpp"

using namespace ecosearch;
using namespace ecosearch::analysis;

namespace {

errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const error& e) {
        return e.code();
    }
    return errc::consistency;
}

// P(F > f) by Simpson's rule on the F(d1, d2) density after mapping
// [f, inf) onto [0, 1) with x = f + t / (1 - t).
double f_tail_by_quadrature(double f, double d1, double d2) {
    const double log_norm = std::lgamma((d1 + d2) / 2) - std::lgamma(d1 / 2) - std::lgamma(d2 / 2) +
                            (d1 / 2) * std::log(d1 / d2);
    auto density = [&](double x) {
        return std::exp(log_norm + (d1 / 2 - 1) * std::log(x) - ((d1 + d2) / 2) * std::log1p(d1 * x / d2));
    };
    auto integrand = [&](double t) {
        if (t >= 1.0) return 0.0;
        double x = f + t / (1 - t);
        return density(x) / ((1 - t) * (1 - t));
    };
    const int n = 200'000;
    const double h = 1.0 / n;
    double s = integrand(0) + integrand(1);
    for (int i = 1; i < n; ++i) s += integrand(i * h) * (i % 2 ? 4 : 2);
    return s * h / 3;
}

} // namespace

// --- proportions and return rates ------------------------------------------

TEST(Proportions, EvenSplit) {
    auto p = category_proportions({{"fruit", 5}, {"invertebrate", 5}});
    EXPECT_EQ(p["fruit"], 0.5);
    EXPECT_EQ(p["invertebrate"], 0.5);
    EXPECT_EQ(category_proportions({{"a", 1}})["a"], 1.0);
}

TEST(Proportions, BurnSeveritySplit) {
    auto p = category_proportions({{"low", 42}, {"moderate", 2}, {"high", 1}});
    EXPECT_NEAR(p["low"], 42.0 / 45.0, 1e-15);
    EXPECT_NEAR(100 * p["low"], 93.3, 0.1);
    EXPECT_NEAR(100 * p["moderate"], 4.4, 0.1);
    EXPECT_NEAR(100 * p["high"], 2.2, 0.1);
}

TEST(Proportions, SumToOneOnRandomCounts) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::uint64_t> count(0, 1000);
    for (int trial = 0; trial < 200; ++trial) {
        CategoryCounts c;
        for (int i = 0; i < 6; ++i) c["c" + std::to_string(i)] = count(rng);
        c["c0"] += 1;
        double sum = 0;
        for (const auto& [_, v] : category_proportions(c)) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    EXPECT_EQ(code_of([] { category_proportions({{"a", 0}, {"b", 0}}); }), errc::empty_denominator);
    EXPECT_EQ(code_of([] { category_proportions({}); }), errc::empty_denominator);
}

TEST(ReturnRate, PhenologyStages) {
    EXPECT_EQ(return_rate(169, 200), 0.845);
    EXPECT_EQ(return_rate(161, 200), 0.805);
    EXPECT_EQ(return_rate(0, 200), 0.0);
    EXPECT_EQ(code_of([] { return_rate(201, 200); }), errc::consistency);
    EXPECT_EQ(code_of([] { return_rate(0, 0); }), errc::domain);
}

// --- mortality ---------------------------------------------------------------

TEST(Mortality, UniformSeriesIsZero) {
    MonthlySeries s;
    s.deaths.fill(1);
    s.observations.fill(100);
    for (const auto& v : mortality_index(s)) {
        ASSERT_TRUE(v.is_finite());
        EXPECT_EQ(v.value, 0.0);
    }
}

TEST(Mortality, SingleElevatedMonth) {
    MonthlySeries s;
    s.deaths.fill(1);
    s.deaths[0] = 2;
    s.observations.fill(100);
    auto idx = mortality_index(s);
    const double mean = (0.02 + 11 * 0.01) / 12;
    const double expected_first = std::log(0.02 / mean) / std::log(2.0);
    const double expected_rest = std::log(0.01 / mean) / std::log(2.0);
    EXPECT_NEAR(idx[0].value, expected_first, 1e-9);
    EXPECT_NEAR(idx[0].value, 0.8845, 1e-4);
    for (std::size_t m = 1; m < 12; ++m) EXPECT_NEAR(idx[m].value, expected_rest, 1e-9);
}

TEST(Mortality, ZeroDeathsAndMissingObservations) {
    MonthlySeries s;
    s.deaths.fill(3);
    s.observations.fill(50);
    s.deaths[2] = 0;
    s.observations[5] = 0;
    s.deaths[5] = 0;
    auto idx = mortality_index(s);
    EXPECT_EQ(idx[2].kind, IndexValue::Kind::neg_infinite);
    EXPECT_TRUE(std::isinf(idx[2].value) && idx[2].value < 0);
    EXPECT_EQ(idx[5].kind, IndexValue::Kind::undefined);
    // Mean over the 11 defined months, one of which is zero.
    double mean = 10 * 0.06 / 11;
    EXPECT_NEAR(idx[0].value, std::log2(0.06 / mean), 1e-12);
}

TEST(Mortality, ScaleInvariance) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::uint64_t> deaths(0, 20), obs(1, 500);
    for (int trial = 0; trial < 100; ++trial) {
        MonthlySeries s;
        for (std::size_t m = 0; m < 12; ++m) {
            s.deaths[m] = deaths(rng);
            s.observations[m] = m == 7 && trial % 3 == 0 ? 0 : obs(rng);
        }
        s.deaths[0] = std::max<std::uint64_t>(s.deaths[0], 1);
        auto scaled = s;
        for (auto& o : scaled.observations) o *= 7;
        auto a = mortality_index(s), b = mortality_index(scaled);
        for (std::size_t m = 0; m < 12; ++m) {
            ASSERT_EQ(a[m].kind, b[m].kind);
            if (a[m].is_finite()) {
                EXPECT_NEAR(a[m].value, b[m].value, 1e-12);
            }
        }
    }
}

TEST(Mortality, DegenerateSeries) {
    MonthlySeries s;
    EXPECT_EQ(code_of([&] { mortality_index(s); }), errc::degenerate_series);
    s.observations.fill(10);
    EXPECT_EQ(code_of([&] { mortality_index(s); }), errc::degenerate_series);
}

TEST(Mortality, DeduplicationKey) {
    auto rec = [](std::uint32_t sp, Date d, double lat, double lon) {
        return MortalityRecord{sp, d, GeoPoint{lat, lon}};
    };
    std::vector<MortalityRecord> in = {
        rec(5, {2022, 4, 1}, 42.361, -71.057),
        rec(5, {2022, 4, 20}, 42.3609, -71.0571), // same cell, same month
        rec(5, {2023, 4, 3}, 42.36, -71.06),      // same month of another year
        rec(5, {2022, 5, 1}, 42.36, -71.06),      // other month
        rec(6, {2022, 4, 1}, 42.36, -71.06),      // other species
        rec(5, {2022, 4, 1}, 42.40, -71.06),      // other cell
        MortalityRecord{5, {2022, 4, 1}, std::nullopt},
        MortalityRecord{5, {2022, 4, 9}, std::nullopt},
    };
    auto out = deduplicate_mortality(in);
    EXPECT_EQ(out.size(), 5u);
    EXPECT_EQ(out[0].observed_at, (Date{2022, 4, 1}));
}

TEST(Mortality, MonthlyCounts) {
    auto c = monthly_counts({{2020, 1, 5}, {2021, 1, 6}, {2020, 12, 31}});
    EXPECT_EQ(c[0], 2u);
    EXPECT_EQ(c[11], 1u);
    EXPECT_EQ(std::accumulate(c.begin(), c.end(), std::uint64_t{0}), 3u);
}

// --- categorical grids ---------------------------------------------------------

TEST(Grid, FactorOneIsIdentity) {
    CategoricalGrid g{3, 2, 0.01, burn_severity_categories(), {0, 1, 2, 3, 2, 1}};
    EXPECT_EQ(aggregate_categorical_grid(g, 1).cells, g.cells);
    EXPECT_EQ(aggregate_categorical_grid(g, 1).cell_size, 0.01);
}

TEST(Grid, MajorityAndTie) {
    // low, low / high, moderate
    CategoricalGrid majority{2, 2, 0.01, burn_severity_categories(), {1, 1, 3, 2}};
    auto out = aggregate_categorical_grid(majority, 2);
    ASSERT_EQ(out.cells.size(), 1u);
    EXPECT_EQ(out.cells[0], 1);
    EXPECT_DOUBLE_EQ(out.cell_size, 0.02);

    // low, low / high, high
    CategoricalGrid tie{2, 2, 0.01, burn_severity_categories(), {1, 1, 3, 3}};
    EXPECT_EQ(aggregate_categorical_grid(tie, 2).cells[0], 1);
    CategoricalGrid tie2{2, 2, 0.01, burn_severity_categories(), {3, 2, 3, 2}};
    EXPECT_EQ(aggregate_categorical_grid(tie2, 2).cells[0], 2);
}

TEST(Grid, RandomGridsMatchCountingOracle) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> dim(1, 13), ord(0, 3), fac(1, 5);
    for (int trial = 0; trial < 200; ++trial) {
        CategoricalGrid g;
        g.width = dim(rng);
        g.height = dim(rng);
        g.cell_size = 0.01;
        g.categories = burn_severity_categories();
        for (std::size_t i = 0; i < g.width * g.height; ++i) g.cells.push_back(static_cast<std::uint8_t>(ord(rng)));
        std::size_t f = fac(rng);
        auto out = aggregate_categorical_grid(g, f);
        ASSERT_EQ(out.width, (g.width + f - 1) / f);
        ASSERT_EQ(out.height, (g.height + f - 1) / f);
        for (std::size_t br = 0; br < out.height; ++br) {
            for (std::size_t bc = 0; bc < out.width; ++bc) {
                int counts[4] = {0, 0, 0, 0};
                for (std::size_t r = br * f; r < g.height && r < (br + 1) * f; ++r)
                    for (std::size_t c = bc * f; c < g.width && c < (bc + 1) * f; ++c) ++counts[g.at(r, c)];
                int best = 0;
                for (int k = 1; k < 4; ++k)
                    if (counts[k] > counts[best]) best = k;
                EXPECT_EQ(out.at(br, bc), best);
                EXPECT_GT(counts[out.at(br, bc)], 0);
            }
        }
    }
}

TEST(Grid, Errors) {
    CategoricalGrid g{2, 2, 0.01, burn_severity_categories(), {0, 1, 2, 3}};
    EXPECT_EQ(code_of([&] { aggregate_categorical_grid(g, 0); }), errc::domain);
    g.cells[0] = 4;
    EXPECT_EQ(code_of([&] { aggregate_categorical_grid(g, 1); }), errc::range);
    g.cells.pop_back();
    EXPECT_EQ(code_of([&] { aggregate_categorical_grid(g, 1); }), errc::shape);
}

TEST(Grid, TextRoundTrip) {
    auto g = parse_grid("0,1,2\n3,2,1\n", burn_severity_categories(), 0.005);
    EXPECT_EQ(g.width, 3u);
    EXPECT_EQ(g.height, 2u);
    EXPECT_EQ(format_grid(g), "0,1,2\n3,2,1\n");
    EXPECT_EQ(code_of([] { parse_grid("0,1\n2\n", burn_severity_categories(), 1); }), errc::shape);
    EXPECT_EQ(code_of([] { parse_grid("0,x\n", burn_severity_categories(), 1); }), errc::parse);
    EXPECT_EQ(code_of([] { parse_grid("0,9\n", burn_severity_categories(), 1); }), errc::range);
}

// --- day of year ---------------------------------------------------------------

TEST(DayOfYear, Examples) {
    EXPECT_EQ(day_of_year({2013, 1, 1}), 1);
    EXPECT_EQ(day_of_year({2013, 12, 31}), 365);
    EXPECT_EQ(day_of_year({2012, 3, 1}), 61);
    EXPECT_EQ(day_of_year({2012, 12, 31}), 366);
    EXPECT_EQ(code_of([] { day_of_year({2013, 2, 29}); }), errc::domain);
}

TEST(DayOfYear, IncrementsByOneAcrossYears) {
    for (int year : {1900, 2000, 2023, 2024}) {
        int expected = 1;
        for (int m = 1; m <= 12; ++m)
            for (int d = 1; d <= days_in_month(year, m); ++d) EXPECT_EQ(day_of_year({year, m, d}), expected++);
    }
}

// --- F distribution and ANOVA --------------------------------------------------

TEST(IncompleteBeta, ClosedForms) {
    for (double x : {0.01, 0.2, 0.5, 0.77, 0.99}) {
        EXPECT_NEAR(regularized_incomplete_beta(1, 1, x), x, 1e-12);
        EXPECT_NEAR(regularized_incomplete_beta(3, 1, x), std::pow(x, 3), 1e-12);
        EXPECT_NEAR(regularized_incomplete_beta(1, 4, x), 1 - std::pow(1 - x, 4), 1e-12);
        EXPECT_NEAR(regularized_incomplete_beta(2.5, 7, x) + regularized_incomplete_beta(7, 2.5, 1 - x), 1.0, 1e-12);
    }
    EXPECT_EQ(regularized_incomplete_beta(2, 3, 0), 0.0);
    EXPECT_EQ(regularized_incomplete_beta(2, 3, 1), 1.0);
    EXPECT_EQ(code_of([] { regularized_incomplete_beta(0, 1, 0.5); }), errc::domain);
}

TEST(FSurvival, MatchesQuadrature) {
    struct Case {
        double f, d1, d2;
    };
    for (auto c : {Case{13.5, 1, 4}, Case{2.0, 3, 20}, Case{0.5, 2, 10}, Case{5.0, 4, 36}, Case{1.0, 9, 120}})
        EXPECT_NEAR(f_survival(c.f, c.d1, c.d2), f_tail_by_quadrature(c.f, c.d1, c.d2), 1e-7)
            << c.f << " " << c.d1 << " " << c.d2;
}

TEST(Anova, IdenticalGroups) {
    auto r = one_way_anova({{1, 2, 3}, {1, 2, 3}});
    EXPECT_EQ(r.f, 0.0);
    EXPECT_EQ(r.p_value, 1.0);
}

TEST(Anova, TwoGroupFixture) {
    auto r = one_way_anova({{1, 2, 3}, {4, 5, 6}});
    // SSB = 6 * 1.5^2 = 13.5 on 1 df; SSW = 4 on 4 df.
    EXPECT_EQ(r.f, 13.5);
    EXPECT_EQ(r.df_between, 1u);
    EXPECT_EQ(r.df_within, 4u);
    EXPECT_EQ(r.ms_within, 1.0);
    double oracle = f_tail_by_quadrature(13.5, 1, 4);
    EXPECT_NEAR(oracle, 0.0213, 1e-4);
    EXPECT_NEAR(r.p_value, oracle, 1e-3);
    EXPECT_NEAR(r.p_value, oracle, 1e-8);
}

TEST(Anova, ZeroWithinVariance) {
    auto r = one_way_anova({{2, 2}, {5, 5}});
    EXPECT_TRUE(r.f_infinite);
    EXPECT_TRUE(std::isinf(r.f));
    EXPECT_EQ(r.p_value, 0.0);
    EXPECT_EQ(code_of([] { one_way_anova({{2, 2}, {2, 2}}); }), errc::domain);
}

TEST(Anova, Errors) {
    EXPECT_EQ(code_of([] { one_way_anova({{1, 2, 3}}); }), errc::domain);
    EXPECT_EQ(code_of([] { one_way_anova({{1, 2, 3}, {4}}); }), errc::domain);
    EXPECT_EQ(code_of([] { one_way_anova({{1, NAN}, {4, 5}}); }), errc::domain);
}

TEST(Anova, ShiftAndScaleInvariance) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> normal(100, 15);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> g(4);
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t n = 0; n < 5 + i; ++n) g[i].push_back(normal(rng) + 3.0 * i);
        auto base = one_way_anova(g);
        for (double c : {-2.5, 0.001, 1000.0}) {
            auto scaled = g, shifted = g;
            for (auto& grp : scaled)
                for (auto& v : grp) v *= c;
            for (auto& grp : shifted)
                for (auto& v : grp) v += c;
            EXPECT_NEAR(one_way_anova(scaled).f, base.f, 1e-9 * base.f);
            EXPECT_NEAR(one_way_anova(shifted).f, base.f, 1e-7 * base.f);
        }
    }
}

TEST(Anova, NullPValuesAreUniform) {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> normal(0, 1);
    std::vector<double> p;
    for (int rep = 0; rep < 10'000; ++rep) {
        std::vector<std::vector<double>> g(3, std::vector<double>(8));
        for (auto& grp : g)
            for (auto& v : grp) v = normal(rng);
        p.push_back(one_way_anova(g).p_value);
    }
    std::sort(p.begin(), p.end());
    double d = 0;
    const double n = static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        d = std::max({d, std::abs((i + 1) / n - p[i]), std::abs(p[i] - i / n)});
    EXPECT_LT(d, 0.02);
}

// --- Tukey ---------------------------------------------------------------------

TEST(StudentizedRange, TableAndInterpolation) {
    EXPECT_DOUBLE_EQ(studentized_range_critical(2, 4), 3.9265);
    double q30 = studentized_range_critical(4, 30), q40 = studentized_range_critical(4, 40);
    double t = (1.0 / 30 - 1.0 / 36) / (1.0 / 30 - 1.0 / 40);
    EXPECT_NEAR(studentized_range_critical(4, 36), q30 + t * (q40 - q30), 1e-12);
    double prev = studentized_range_critical(5, 2);
    for (double df = 2.5; df < 1e6; df *= 1.3) {
        double q = studentized_range_critical(5, df);
        EXPECT_LE(q, prev + 1e-12);
        prev = q;
    }
    for (std::size_t k = 3; k <= 10; ++k)
        EXPECT_GT(studentized_range_critical(k, 20), studentized_range_critical(k - 1, 20));
    EXPECT_EQ(code_of([] { studentized_range_critical(11, 10); }), errc::domain);
    EXPECT_EQ(code_of([] { studentized_range_critical(3, 1); }), errc::domain);
}

TEST(Tukey, TwoGroupExamples) {
    auto same = tukey_hsd({{1, 2, 3}, {1, 2, 3}, {0, 2, 4}});
    EXPECT_EQ(same.pairs[0].q, 0.0);
    EXPECT_FALSE(same.pairs[0].significant);

    auto far = tukey_hsd({{1, 2, 3}, {10, 11, 12}});
    ASSERT_EQ(far.pairs.size(), 1u);
    // MSW = 1, se = sqrt(1/2 * 2/3); q = 9 / se.
    EXPECT_NEAR(far.pairs[0].q, 9.0 / std::sqrt(1.0 / 3.0), 1e-12);
    EXPECT_DOUBLE_EQ(far.critical_q, 3.9265);
    EXPECT_TRUE(far.pairs[0].significant);
}

TEST(Tukey, FourStageFixtureFlagsOnlyOverlappingPair) {
    // Day-of-year samples for emergence, flowering, seeding and senescence;
    // the last two overlap.
    const std::vector<double> offsets = {-9, -6, -4, -2, -1, 1, 2, 4, 6, 9};
    const std::vector<double> centers = {140, 190, 240, 243};
    std::vector<std::vector<double>> groups;
    for (double c : centers) {
        groups.emplace_back();
        for (double o : offsets) groups.back().push_back(c + o);
    }
    auto r = tukey_hsd(groups);
    // Oracle: pooled variance from the offsets alone, q from its definition,
    // critical value 3.809 for 4 groups and 36 df.
    double ss = 0;
    for (double o : offsets) ss += o * o;
    double msw = 4 * ss / 36;
    EXPECT_NEAR(r.ms_within, msw, 1e-9);
    EXPECT_NEAR(r.critical_q, 3.809, 2e-3);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = i + 1; j < 4; ++j, ++idx) {
            double q = std::abs(centers[i] - centers[j]) / std::sqrt(msw / 10);
            EXPECT_NEAR(r.pairs[idx].q, q, 1e-9);
            EXPECT_EQ(r.pairs[idx].significant, !(i == 2 && j == 3)) << i << "," << j;
        }
    }
    EXPECT_LT(one_way_anova(groups).p_value, 1e-10);
}

TEST(Tukey, FlagsInvariantUnderRelabeling) {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> normal(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> g(5);
        for (std::size_t i = 0; i < 5; ++i)
            for (int n = 0; n < 6; ++n) g[i].push_back(normal(rng) + 0.8 * i);
        std::vector<std::size_t> perm = {0, 1, 2, 3, 4};
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::vector<double>> pg;
        for (auto p : perm) pg.push_back(g[p]);
        auto a = tukey_hsd(g), b = tukey_hsd(pg);
        auto flag = [](const TukeyResult& r, std::size_t i, std::size_t j) {
            if (i > j) std::swap(i, j);
            for (const auto& p : r.pairs)
                if (p.first == i && p.second == j) return p.significant;
            ADD_FAILURE();
            return false;
        };
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = i + 1; j < 5; ++j) {
                std::size_t pi = std::find(perm.begin(), perm.end(), i) - perm.begin();
                std::size_t pj = std::find(perm.begin(), perm.end(), j) - perm.begin();
                EXPECT_EQ(flag(a, i, j), flag(b, pi, pj));
            }
    }
}

// --- CSV adapters ----------------------------------------------------------------

TEST(AnalysisInput, MarkedRowsAreEvidence) {
    csv::Table t("observation_id,marked,taxon_id,observed_at,latitude,longitude\r\n"
                 "1,true,5,2022-04-01,42.36,-71.06\r\n"
                 "2,false,5,2022-05-01,42.36,-71.06\r\n"
                 "3,true,6,2022-04-02,,\r\n"
                 "4,true,5,2022-04-20,42.36,-71.06\r\n");
    auto counts = proportions_input(t, "taxon_id");
    EXPECT_EQ(counts["5"], 2u);
    EXPECT_EQ(counts["6"], 1u);
    auto records = mortality_records(t);
    ASSERT_EQ(records.size(), 3u);
    EXPECT_FALSE(records[1].location);
    csv::Table obs("observed_at\r\n2022-04-10\r\n2022-04-11\r\n2022-06-01\r\n");
    auto series = mortality_input(t, obs, true);
    EXPECT_EQ(series.deaths[3], 2u);
    EXPECT_EQ(series.observations[3], 2u);
    EXPECT_EQ(series.observations[5], 1u);
    EXPECT_EQ(mortality_input(t, obs, false).deaths[3], 3u);
}

TEST(AnalysisInput, PhenologyGroups) {
    csv::Table t("stage,observed_at,marked\r\n"
                 "flowering,2020-07-01,true\r\n"
                 "flowering,2020-07-03,false\r\n"
                 "seeding,2020-09-01,true\r\n"
                 "flowering,2020-01-01,true\r\n");
    auto in = phenology_input(t, "observed_at", "stage");
    ASSERT_EQ(in.labels, (std::vector<std::string>{"flowering", "seeding"}));
    EXPECT_EQ(in.days[0], (std::vector<double>{183, 1}));
    EXPECT_EQ(in.inspected[0], 3u);
    EXPECT_EQ(in.days[1], (std::vector<double>{245}));
    EXPECT_EQ(code_of([] {
                  phenology_input(csv::Table("stage,observed_at\r\nx,2020-13-01\r\n"), "observed_at", "stage");
              }),
              errc::parse);
}
