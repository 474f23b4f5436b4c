// ecosearch command-line front end: index building, the HTTP service, one-off
// queries, session export, and the analysis helpers over exported CSVs.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "ecosearch/ecosearch.hpp"
#include "ecosearch/http_api.hpp"

namespace es = ecosearch;
using nlohmann::json;

namespace {

std::vector<int> parse_months(const std::string& text) {
    std::vector<int> months;
    for (auto part : es::detail::split(text, ',')) {
        auto m = es::detail::parse_integer<int>(part);
        if (!m) throw es::error(es::errc::parse, "bad month list '" + text + "'");
        months.push_back(*m);
    }
    return months;
}

es::GeoBox parse_bbox(const std::string& text) {
    auto parts = es::detail::split(text, ',');
    if (parts.size() != 4) throw es::error(es::errc::parse, "bbox needs latmin,latmax,lonmin,lonmax");
    double v[4];
    for (int i = 0; i < 4; ++i) {
        auto d = es::detail::parse_double(parts[static_cast<std::size_t>(i)]);
        if (!d) throw es::error(es::errc::parse, "bad bbox value '" + std::string(parts[static_cast<std::size_t>(i)]) + "'");
        v[i] = *d;
    }
    return {v[0], v[1], v[2], v[3]};
}

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

void print_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) widths[c] = header[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], r[c].size());
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t c = 0; c < r.size(); ++c) std::cout << (c ? "  " : "") << pad(r[c], widths[c]);
        std::cout << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

es::csv::Table read_table(const std::string& path) { return es::csv::Table(es::detail::read_file(path)); }

httplib::Server* g_server = nullptr;
void stop_server(int) {
    if (g_server) g_server->stop();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Natural-language image retrieval over observation corpora"};
    app.require_subcommand(1);

    // build-index ------------------------------------------------------------
    auto* build = app.add_subcommand("build-index", "Build an index directory from embeddings and metadata");
    std::string emb_path, meta_path, out_dir, quantize = "none";
    std::optional<std::size_t> nlist;
    std::uint64_t seed = 1;
    std::size_t max_iters = 20;
    bool round_coords = false;
    std::string link_template = es::default_link_template;
    build->add_option("--embeddings", emb_path, "Embedding file (INQE)")->required()->envname("ECOSEARCH_EMBEDDINGS");
    build->add_option("--metadata", meta_path, "Tab-separated metadata file")->required()->envname("ECOSEARCH_METADATA");
    build->add_option("--out", out_dir, "Output index directory")->required()->envname("ECOSEARCH_INDEX");
    build->add_option("--nlist", nlist, "Number of inverted lists (default round(sqrt(count)))")->envname("ECOSEARCH_NLIST");
    build->add_option("--seed", seed, "k-means seed")->envname("ECOSEARCH_SEED");
    build->add_option("--max-iters", max_iters, "k-means iteration cap")->envname("ECOSEARCH_MAX_ITERS");
    build->add_option("--quantize", quantize, "Vector storage: none or int8")
        ->check(CLI::IsMember({"none", "int8"}))
        ->envname("ECOSEARCH_QUANTIZE");
    build->add_flag("--round-coords", round_coords, "Round coordinates to 0.01 degree")->envname("ECOSEARCH_ROUND_COORDS");
    build->add_option("--link-template", link_template, "Observation link with {id} placeholder")
        ->envname("ECOSEARCH_LINK_TEMPLATE");

    // serve ------------------------------------------------------------------
    auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
    std::string index_dir, encoder_spec = "test", host = "127.0.0.1", sessions_dir = "sessions", ui_dir;
    int port = 8080;
    std::size_t prefilter = es::default_prefilter_threshold;
    serve->add_option("--index", index_dir, "Index directory")->required()->envname("ECOSEARCH_INDEX");
    serve->add_option("--encoder", encoder_spec, "'remote URL', 'lookup FILE' or 'test'")->envname("ECOSEARCH_ENCODER");
    serve->add_option("--port", port, "Listen port (0 picks a free port)")->envname("ECOSEARCH_PORT");
    serve->add_option("--host", host, "Listen address")->envname("ECOSEARCH_HOST");
    serve->add_option("--sessions", sessions_dir, "Session log directory")->envname("ECOSEARCH_SESSIONS");
    serve->add_option("--ui", ui_dir, "Static UI bundle served under /ui")->envname("ECOSEARCH_UI");
    serve->add_option("--prefilter-threshold", prefilter, "Exact-scoring cutoff for filtered searches")
        ->envname("ECOSEARCH_PREFILTER_THRESHOLD");

    // query ------------------------------------------------------------------
    auto* query = app.add_subcommand("query", "Run one search and print the ranked results");
    std::string text, months_arg, bbox_arg;
    std::optional<std::uint32_t> taxon;
    std::size_t k = 10;
    std::optional<std::size_t> nprobe;
    bool query_json = false;
    query->add_option("--index", index_dir, "Index directory")->required()->envname("ECOSEARCH_INDEX");
    query->add_option("--text", text, "Query text")->required();
    query->add_option("--taxon", taxon, "Taxon id filter");
    query->add_option("--months", months_arg, "Months filter, e.g. 6,7,8");
    query->add_option("--bbox", bbox_arg, "latmin,latmax,lonmin,lonmax");
    query->add_option("-k", k, "Number of results");
    query->add_option("--nprobe", nprobe, "Lists to scan (default from the index)");
    query->add_option("--encoder", encoder_spec, "'remote URL', 'lookup FILE' or 'test'")->envname("ECOSEARCH_ENCODER");
    query->add_flag("--json", query_json, "Print JSON instead of a table");

    // export -----------------------------------------------------------------
    auto* exp = app.add_subcommand("export", "Write a session's latest results as CSV");
    std::string session_id, out_file;
    exp->add_option("--session", session_id, "Session id")->required();
    exp->add_option("--out", out_file, "Output CSV file")->required();
    exp->add_option("--sessions", sessions_dir, "Session log directory")->envname("ECOSEARCH_SESSIONS");

    // analyze ----------------------------------------------------------------
    auto* analyze = app.add_subcommand("analyze", "Statistics over exported CSV files");
    analyze->require_subcommand(1);
    bool as_json = false;
    analyze->add_flag("--json", as_json, "Print JSON instead of a table");

    auto* prop = analyze->add_subcommand("proportions", "Share of evidence rows per category");
    std::string by_column;
    std::vector<std::string> inputs;
    prop->add_option("--by", by_column, "Category column")->required();
    prop->add_option("files", inputs, "Exported CSV files")->required()->check(CLI::ExistingFile);
    prop->add_flag("--json", as_json, "Print JSON");

    auto* mort = analyze->add_subcommand("mortality", "Monthly log2 mortality index");
    std::string deaths_file, obs_file;
    bool dedupe = false;
    mort->add_option("--deaths", deaths_file, "Verified mortality export")->required()->check(CLI::ExistingFile);
    mort->add_option("--observations", obs_file, "All-observation table")->required()->check(CLI::ExistingFile);
    mort->add_flag("--dedupe", dedupe, "Drop duplicates sharing species, month and rounded coordinates");
    mort->add_flag("--json", as_json, "Print JSON");

    auto* phen = analyze->add_subcommand("phenology", "Day-of-year ANOVA and Tukey comparisons by group");
    std::string date_column = "observed_at", group_column = "stage";
    phen->add_option("--column", date_column, "Date column");
    phen->add_option("--group", group_column, "Group column");
    phen->add_option("files", inputs, "Exported CSV files")->required()->check(CLI::ExistingFile);
    phen->add_flag("--json", as_json, "Print JSON");

    auto* grid = analyze->add_subcommand("grid-mode", "Mode-aggregate a categorical grid");
    std::string grid_file, categories_arg;
    std::size_t factor = 1;
    double cell_size = 0.0;
    grid->add_option("--grid", grid_file, "Grid CSV of ordinals")->required()->check(CLI::ExistingFile);
    grid->add_option("--factor", factor, "Block size")->required();
    grid->add_option("--categories", categories_arg, "Comma-separated category labels (default MTBS severity)");
    grid->add_option("--cell-size", cell_size, "Input cell size in degrees");
    grid->add_flag("--json", as_json, "Print JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (build->parsed()) {
            es::BuildOptions opts;
            opts.nlist = nlist;
            opts.seed = seed;
            opts.max_iters = max_iters;
            opts.quantization = quantize == "int8" ? es::Quantization::int8 : es::Quantization::none;
            opts.round_coords = round_coords;
            opts.link_template = link_template;
            auto m = es::build_index_directory(emb_path, meta_path, out_dir, opts);
            std::cout << "indexed " << m.count << " vectors (dim " << m.dim << ", nlist " << m.nlist << ") into "
                      << out_dir << '\n';
            return 0;
        }

        if (serve->parsed()) {
            std::shared_ptr<const es::Catalog> catalog = es::Catalog::open(index_dir);
            es::Encoder encoder(es::parse_encoder_backend(encoder_spec, catalog->corpus().dim()));
            es::SearchService service(catalog, std::move(encoder), sessions_dir, prefilter);
            httplib::Server server;
            es::http::register_routes(server, service);
            if (!ui_dir.empty() && !server.set_mount_point("/ui", ui_dir))
                throw es::error(es::errc::configuration, "UI directory not found: " + ui_dir);
            g_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            int bound = port;
            if (port == 0) {
                bound = server.bind_to_any_port(host);
            } else if (!server.bind_to_port(host, port)) {
                throw es::error(es::errc::io, "cannot bind " + host + ":" + std::to_string(port));
            }
            if (bound < 0) throw es::error(es::errc::io, "cannot bind " + host);
            std::cout << "listening on " << host << ":" << bound << std::endl;
            server.listen_after_bind();
            return 0;
        }

        if (query->parsed()) {
            auto catalog = es::Catalog::open(index_dir);
            es::Encoder encoder(es::parse_encoder_backend(encoder_spec, catalog->corpus().dim()));
            es::FilterSpec spec;
            spec.taxon = taxon;
            if (!months_arg.empty()) spec.months = parse_months(months_arg);
            if (!bbox_arg.empty()) spec.geo_box = parse_bbox(bbox_arg);
            std::size_t probe = nprobe.value_or(std::min<std::size_t>(catalog->manifest().nprobe, catalog->index().nlist()));
            auto hits = es::filtered_search(catalog->context(), spec, es::encode_text(encoder, text), k, probe);
            const auto& corpus = catalog->corpus();
            if (query_json) {
                json out = json::array();
                for (std::size_t i = 0; i < hits.size(); ++i) {
                    const auto& rec = corpus.record(hits[i].vector_position);
                    out.push_back(es::to_json(es::ResultEntry{rec.observation_id, static_cast<std::uint32_t>(i + 1),
                                                              hits[i].score, rec.taxon_path, rec.observed_at,
                                                              rec.location, rec.image_url}));
                }
                std::cout << out.dump(2) << '\n';
                return 0;
            }
            std::vector<std::vector<std::string>> rows;
            for (std::size_t i = 0; i < hits.size(); ++i) {
                const auto& rec = corpus.record(hits[i].vector_position);
                rows.push_back({std::to_string(i + 1), std::to_string(rec.observation_id), fixed(hits[i].score, 4),
                                std::to_string(rec.leaf_taxon()), es::format_date(rec.observed_at),
                                rec.location ? es::detail::format_double(rec.location->latitude) : "",
                                rec.location ? es::detail::format_double(rec.location->longitude) : "",
                                rec.image_url});
            }
            print_table({"rank", "observation_id", "score", "taxon", "observed_at", "lat", "lon", "image_url"}, rows);
            return 0;
        }

        if (exp->parsed()) {
            auto session = es::SessionStore::load_log(es::SessionStore::log_path(sessions_dir, session_id));
            es::detail::write_file(out_file, es::export_csv(session));
            std::cout << "wrote " << session.results.size() << " rows to " << out_file << '\n';
            return 0;
        }

        namespace an = es::analysis;
        if (prop->parsed()) {
            an::CategoryCounts counts;
            for (const auto& f : inputs)
                for (const auto& [label, n] : an::proportions_input(read_table(f), by_column)) counts[label] += n;
            auto props = an::category_proportions(counts);
            if (as_json) {
                json out = json::object();
                for (const auto& [label, p] : props) out[label] = {{"count", counts[label]}, {"proportion", p}};
                std::cout << out.dump(2) << '\n';
            } else {
                std::vector<std::vector<std::string>> rows;
                for (const auto& [label, p] : props)
                    rows.push_back({label, std::to_string(counts[label]), fixed(100.0 * p, 1) + "%"});
                print_table({by_column, "count", "share"}, rows);
            }
            return 0;
        }

        if (mort->parsed()) {
            auto series = an::mortality_input(read_table(deaths_file), read_table(obs_file), dedupe);
            auto index = an::mortality_index(series);
            auto label = [](const an::IndexValue& v) -> std::string {
                switch (v.kind) {
                case an::IndexValue::Kind::finite: return fixed(v.value, 4);
                case an::IndexValue::Kind::neg_infinite: return "-inf";
                case an::IndexValue::Kind::undefined: return "undefined";
                }
                return "";
            };
            if (as_json) {
                json out = json::array();
                for (std::size_t m = 0; m < 12; ++m) {
                    json entry = {{"month", m + 1}, {"deaths", series.deaths[m]}, {"observations", series.observations[m]}};
                    if (index[m].is_finite()) entry["index"] = index[m].value;
                    else entry["index"] = label(index[m]);
                    out.push_back(entry);
                }
                std::cout << out.dump(2) << '\n';
            } else {
                std::vector<std::vector<std::string>> rows;
                for (std::size_t m = 0; m < 12; ++m)
                    rows.push_back({std::to_string(m + 1), std::to_string(series.deaths[m]),
                                    std::to_string(series.observations[m]), label(index[m])});
                print_table({"month", "deaths", "observations", "mortality_index"}, rows);
            }
            return 0;
        }

        if (phen->parsed()) {
            an::PhenologyInput merged;
            for (const auto& f : inputs) {
                auto in = an::phenology_input(read_table(f), date_column, group_column);
                for (std::size_t g = 0; g < in.labels.size(); ++g) {
                    auto it = std::find(merged.labels.begin(), merged.labels.end(), in.labels[g]);
                    std::size_t slot = static_cast<std::size_t>(it - merged.labels.begin());
                    if (it == merged.labels.end()) {
                        merged.labels.push_back(in.labels[g]);
                        merged.days.emplace_back();
                        merged.inspected.push_back(0);
                    }
                    merged.days[slot].insert(merged.days[slot].end(), in.days[g].begin(), in.days[g].end());
                    merged.inspected[slot] += in.inspected[g];
                }
            }
            auto anova = an::one_way_anova(merged.days);
            auto tukey = an::tukey_hsd(merged.days);
            if (as_json) {
                json groups = json::array();
                for (std::size_t g = 0; g < merged.labels.size(); ++g)
                    groups.push_back({{"group", merged.labels[g]},
                                      {"matched", merged.days[g].size()},
                                      {"inspected", merged.inspected[g]},
                                      {"return_rate", an::return_rate(merged.days[g].size(), merged.inspected[g])}});
                json pairs = json::array();
                for (const auto& p : tukey.pairs)
                    pairs.push_back({{"a", merged.labels[p.first]}, {"b", merged.labels[p.second]}, {"q", p.q},
                                     {"significant", p.significant}});
                std::cout << json{{"groups", groups},
                                  {"anova", {{"F", anova.f_infinite ? json("inf") : json(anova.f)},
                                             {"df_between", anova.df_between},
                                             {"df_within", anova.df_within},
                                             {"p_value", anova.p_value}}},
                                  {"tukey", {{"critical_q", tukey.critical_q}, {"pairs", pairs}}}}
                                 .dump(2)
                          << '\n';
            } else {
                std::vector<std::vector<std::string>> rows;
                for (std::size_t g = 0; g < merged.labels.size(); ++g)
                    rows.push_back({merged.labels[g], std::to_string(merged.days[g].size()),
                                    std::to_string(merged.inspected[g]),
                                    fixed(100.0 * an::return_rate(merged.days[g].size(), merged.inspected[g]), 1) + "%"});
                print_table({group_column, "matched", "inspected", "return_rate"}, rows);
                std::cout << "\nANOVA: F(" << anova.df_between << ", " << anova.df_within
                          << ") = " << (anova.f_infinite ? std::string("inf") : fixed(anova.f, 4))
                          << ", p = " << fixed(anova.p_value, 6) << "\n\n";
                rows.clear();
                for (const auto& p : tukey.pairs)
                    rows.push_back({merged.labels[p.first], merged.labels[p.second], fixed(p.q, 4),
                                    p.significant ? "yes" : "no"});
                print_table({"group_a", "group_b", "q", "significant(0.05)"}, rows);
                std::cout << "critical q = " << fixed(tukey.critical_q, 4) << '\n';
            }
            return 0;
        }

        if (grid->parsed()) {
            std::vector<std::string> categories = an::burn_severity_categories();
            if (!categories_arg.empty()) {
                categories.clear();
                for (auto c : es::detail::split(categories_arg, ',')) categories.emplace_back(c);
            }
            auto g = an::parse_grid(es::detail::read_file(grid_file), categories, cell_size);
            auto out = an::aggregate_categorical_grid(g, factor);
            if (as_json) {
                json rows = json::array();
                for (std::size_t r = 0; r < out.height; ++r) {
                    json row = json::array();
                    for (std::size_t c = 0; c < out.width; ++c) row.push_back(out.at(r, c));
                    rows.push_back(row);
                }
                std::cout << json{{"width", out.width}, {"height", out.height}, {"cell_size", out.cell_size},
                                  {"categories", out.categories}, {"cells", rows}}
                                 .dump(2)
                          << '\n';
            } else {
                std::cout << an::format_grid(out);
            }
            return 0;
        }
    } catch (const es::error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
