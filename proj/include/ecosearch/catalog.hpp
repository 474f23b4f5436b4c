#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "ecosearch/embedding_store.hpp"
#include "ecosearch/error.hpp"
#include "ecosearch/ivf_index.hpp"
#include "ecosearch/kmeans.hpp"
#include "ecosearch/metadata_index.hpp"

namespace ecosearch {

inline constexpr const char* default_link_template = "https://www.inaturalist.org/observations/{id}";

struct BuildOptions {
    std::optional<std::size_t> nlist; // default_nlist(count) when unset
    std::uint64_t seed = 1;
    std::size_t max_iters = 20;
    std::size_t training_points_per_list = 64;
    Quantization quantization = Quantization::none;
    bool round_coords = false;
    std::string link_template = default_link_template;
};

/// Contents of `manifest.json` in an index directory.
struct Manifest {
    std::uint64_t count = 0;
    std::uint32_t dim = 0;
    std::uint32_t nlist = 0;
    std::uint32_t nprobe = 1;
    std::uint64_t seed = 0;
    Quantization quantization = Quantization::none;
    bool round_coords = false;
    std::string link_template = default_link_template;
};

inline nlohmann::json to_json(const Manifest& m) {
    return {{"format_version", 1},
            {"count", m.count},
            {"dim", m.dim},
            {"nlist", m.nlist},
            {"nprobe", m.nprobe},
            {"seed", m.seed},
            {"quantization", m.quantization == Quantization::int8 ? "int8" : "none"},
            {"round_coords", m.round_coords},
            {"link_template", m.link_template}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format_version").get<int>() != 1) throw error(errc::format, "unsupported manifest version");
        Manifest m;
        m.count = j.at("count").get<std::uint64_t>();
        m.dim = j.at("dim").get<std::uint32_t>();
        m.nlist = j.at("nlist").get<std::uint32_t>();
        m.nprobe = j.at("nprobe").get<std::uint32_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        auto q = j.at("quantization").get<std::string>();
        if (q != "none" && q != "int8") throw error(errc::format, "unknown quantization '" + q + "'");
        m.quantization = q == "int8" ? Quantization::int8 : Quantization::none;
        m.round_coords = j.at("round_coords").get<bool>();
        m.link_template = j.at("link_template").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::format, std::string("manifest: ") + e.what());
    }
}

namespace index_files {
inline constexpr const char* index = "index.inqi";
inline constexpr const char* embeddings = "embeddings.inqe";
inline constexpr const char* metadata = "metadata.tsv";
inline constexpr const char* manifest = "manifest.json";
} // namespace index_files

/// Ingests an embedding file and its metadata, trains the coarse quantizer on
/// a deterministic sample, and writes a self-contained index directory.
inline Manifest build_index_directory(const std::string& embeddings_path, const std::string& metadata_path,
                                      const std::string& out_dir, const BuildOptions& opts) {
    namespace fs = std::filesystem;
    auto embeddings = load_embeddings(embeddings_path, true);
    auto records = load_metadata(metadata_path);
    if (opts.round_coords) quantize_coordinates(records);
    Corpus corpus = build_corpus(std::move(embeddings), std::move(records));
    if (corpus.size() == 0) throw error(errc::capacity, "cannot index an empty corpus");

    std::size_t nlist = opts.nlist.value_or(default_nlist(corpus.size()));
    auto training = sample_rows(corpus.embeddings(), nlist * opts.training_points_per_list, opts.seed);
    Centroids centroids = train_kmeans(training, nlist, opts.seed, opts.max_iters);
    IvfIndex index = build_ivf(corpus, centroids, opts.quantization);

    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    save_index(index, (dir / index_files::index).string());
    save_embeddings(corpus.embeddings(), (dir / index_files::embeddings).string());
    save_metadata(corpus.records(), (dir / index_files::metadata).string());

    Manifest m;
    m.count = corpus.size();
    m.dim = static_cast<std::uint32_t>(corpus.dim());
    m.nlist = static_cast<std::uint32_t>(nlist);
    m.nprobe = static_cast<std::uint32_t>(default_nprobe(nlist));
    m.seed = opts.seed;
    m.quantization = opts.quantization;
    m.round_coords = opts.round_coords;
    m.link_template = opts.link_template;
    detail::write_file((dir / index_files::manifest).string(), to_json(m).dump(2) + "\n");
    return m;
}

/// An opened index directory: mapped index and embeddings plus the in-memory
/// metadata indexes. Immutable after `open`.
class Catalog {
  public:
    static std::unique_ptr<const Catalog> open(const std::string& dir_path) {
        namespace fs = std::filesystem;
        fs::path dir(dir_path);
        auto c = std::unique_ptr<Catalog>(new Catalog());
        try {
            c->manifest_ = manifest_from_json(
                nlohmann::json::parse(detail::read_file((dir / index_files::manifest).string())));
        } catch (const nlohmann::json::exception& e) {
            throw error(errc::format, std::string("manifest: ") + e.what());
        }
        c->corpus_ = build_corpus(map_embeddings((dir / index_files::embeddings).string()),
                                  load_metadata((dir / index_files::metadata).string()));
        c->index_ = open_index((dir / index_files::index).string());
        if (c->index_.total_vectors() != c->corpus_.size() || c->index_.dim() != c->corpus_.dim())
            throw error(errc::alignment, dir_path + ": index and corpus disagree on size or dim");
        c->taxa_ = build_taxon_index(c->corpus_);
        c->months_ = build_month_index(c->corpus_);
        return c;
    }

    const Manifest& manifest() const noexcept { return manifest_; }
    const Corpus& corpus() const noexcept { return corpus_; }
    const IvfIndex& index() const noexcept { return index_; }
    const TaxonIndex& taxa() const noexcept { return taxa_; }
    const MonthIndex& months() const noexcept { return months_; }

    SearchContext context(std::size_t prefilter_threshold = default_prefilter_threshold) const {
        return SearchContext{index_, corpus_, taxa_, months_, prefilter_threshold};
    }

  private:
    Catalog() = default;

    Manifest manifest_;
    Corpus corpus_;
    IvfIndex index_;
    TaxonIndex taxa_;
    MonthIndex months_;
};

} // namespace ecosearch
