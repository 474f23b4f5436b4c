#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ecosearch/date.hpp"
#include "ecosearch/error.hpp"
#include "ecosearch/mapped_file.hpp"
#include "ecosearch/vector_ops.hpp"

namespace ecosearch {

struct GeoPoint {
    double latitude = 0.0;
    double longitude = 0.0;

    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

/// One community-science observation.
struct ObservationRecord {
    std::uint64_t observation_id = 0;
    std::vector<std::uint32_t> taxon_path; // root to leaf
    Date observed_at;
    std::optional<GeoPoint> location;
    std::string image_url;

    std::uint32_t leaf_taxon() const { return taxon_path.back(); }

    friend bool operator==(const ObservationRecord&, const ObservationRecord&) = default;
};

/// Row-major float matrix. Storage is either owned or a view into a mapped
/// embedding file; both are immutable once constructed.
class EmbeddingMatrix {
  public:
    EmbeddingMatrix() = default;

    EmbeddingMatrix(std::size_t count, std::size_t dim, std::vector<float> values)
        : count_(count), dim_(dim) {
        if (values.size() != count * dim)
            throw error(errc::shape, "matrix payload has " + std::to_string(values.size()) +
                                         " values, expected " + std::to_string(count * dim));
        auto owned = std::make_shared<const std::vector<float>>(std::move(values));
        data_ = owned->data();
        owner_ = std::move(owned);
    }

    static EmbeddingMatrix view(std::shared_ptr<const MappedFile> file, std::size_t offset,
                                std::size_t count, std::size_t dim) {
        EmbeddingMatrix m;
        m.count_ = count;
        m.dim_ = dim;
        m.data_ = reinterpret_cast<const float*>(file->bytes().data() + offset);
        m.owner_ = std::move(file);
        return m;
    }

    std::size_t count() const noexcept { return count_; }
    std::size_t dim() const noexcept { return dim_; }
    std::span<const float> row(std::size_t i) const noexcept { return {data_ + i * dim_, dim_}; }
    std::span<const float> values() const noexcept { return {data_, count_ * dim_}; }

  private:
    std::size_t count_ = 0;
    std::size_t dim_ = 0;
    const float* data_ = nullptr;
    std::shared_ptr<const void> owner_;
};

// ---------------------------------------------------------------------------
// Embedding file: "INQE" | u32 version | u64 count | u32 dim | u8 dtype |
// 7 reserved zero bytes | count*dim little-endian f32, row-major.
// ---------------------------------------------------------------------------

inline constexpr char embedding_magic[4] = {'I', 'N', 'Q', 'E'};
inline constexpr std::uint32_t embedding_format_version = 1;
inline constexpr std::uint8_t embedding_dtype_f32 = 1;
inline constexpr std::size_t embedding_header_size = 28;
inline constexpr double unit_norm_tolerance = 1e-4;

inline std::string encode_embeddings(const EmbeddingMatrix& m) {
    std::string out;
    out.reserve(embedding_header_size + m.values().size_bytes());
    out.append(embedding_magic, 4);
    detail::append_pod(out, embedding_format_version);
    detail::append_pod(out, static_cast<std::uint64_t>(m.count()));
    detail::append_pod(out, static_cast<std::uint32_t>(m.dim()));
    detail::append_pod(out, embedding_dtype_f32);
    out.append(7, '\0');
    out.append(reinterpret_cast<const char*>(m.values().data()), m.values().size_bytes());
    return out;
}

inline void save_embeddings(const EmbeddingMatrix& m, const std::string& path) {
    detail::write_file(path, encode_embeddings(m));
}

namespace detail {

struct EmbeddingHeader {
    std::uint64_t count = 0;
    std::uint32_t dim = 0;
};

inline EmbeddingHeader parse_embedding_header(std::span<const std::byte> bytes,
                                              const std::string& path) {
    if (bytes.size() < embedding_header_size ||
        std::memcmp(bytes.data(), embedding_magic, 4) != 0)
        throw error(errc::format, path + ": not an embedding file (bad magic)");
    auto version = read_pod<std::uint32_t>(bytes, 4);
    if (version != embedding_format_version)
        throw error(errc::format, path + ": unsupported embedding format version " +
                                      std::to_string(version));
    EmbeddingHeader h;
    h.count = read_pod<std::uint64_t>(bytes, 8);
    h.dim = read_pod<std::uint32_t>(bytes, 16);
    auto dtype = read_pod<std::uint8_t>(bytes, 20);
    if (dtype != embedding_dtype_f32)
        throw error(errc::format, path + ": unsupported dtype tag " + std::to_string(dtype));
    for (std::size_t i = 21; i < embedding_header_size; ++i)
        if (bytes[i] != std::byte{0}) throw error(errc::format, path + ": reserved bytes not zero");
    if (h.dim == 0) throw error(errc::format, path + ": dim is zero");
    std::uint64_t expected = embedding_header_size + h.count * h.dim * sizeof(float);
    if (h.count > (std::numeric_limits<std::uint64_t>::max() / 4) / h.dim ||
        bytes.size() != expected)
        throw error(errc::corruption, path + ": payload is " +
                                          std::to_string(bytes.size() - embedding_header_size) +
                                          " bytes, header implies " +
                                          std::to_string(expected - embedding_header_size));
    return h;
}

} // namespace detail

/// Reads an embedding file into memory. With `normalize` rows are scaled to
/// unit length (zero rows are rejected); without it any row whose norm is off
/// by more than 1e-4 is rejected.
inline EmbeddingMatrix load_embeddings(const std::string& path, bool normalize) {
    std::string raw = detail::read_file(path);
    auto bytes = std::as_bytes(std::span<const char>(raw));
    auto header = detail::parse_embedding_header(bytes, path);
    std::vector<float> values(header.count * header.dim);
    std::memcpy(values.data(), raw.data() + embedding_header_size, values.size() * sizeof(float));
    for (std::size_t r = 0; r < header.count; ++r) {
        std::span<float> row(values.data() + r * header.dim, header.dim);
        if (normalize) {
            if (!normalize_in_place(row))
                throw error(errc::degenerate_vector,
                            path + ": row " + std::to_string(r) + " has zero or non-finite norm");
        } else {
            double norm = l2_norm(row);
            if (!(std::abs(norm - 1.0) <= unit_norm_tolerance))
                throw error(errc::normalization, path + ": row " + std::to_string(r) +
                                                     " has norm " + std::to_string(norm));
        }
    }
    return EmbeddingMatrix(header.count, header.dim, std::move(values));
}

/// Maps an embedding file produced by `save_embeddings` without reading the
/// payload. Rows are trusted to be normalized already.
inline EmbeddingMatrix map_embeddings(const std::string& path) {
    auto file = std::make_shared<const MappedFile>(path);
    auto header = detail::parse_embedding_header(file->bytes(), path);
    return EmbeddingMatrix::view(std::move(file), embedding_header_size, header.count, header.dim);
}

// ---------------------------------------------------------------------------
// Metadata: tab-separated lines of
//   observation_id  taxon_path(a/b/c)  YYYY-MM-DD  latitude  longitude  image_url
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

template <class T> std::optional<T> parse_integer(std::string_view s) {
    T value{};
    if (s.empty()) return std::nullopt;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

inline std::optional<double> parse_double(std::string_view s) {
    double value{};
    if (s.empty()) return std::nullopt;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(value))
        return std::nullopt;
    return value;
}

/// Shortest representation that round-trips.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string format_float(float v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace detail

inline std::optional<std::vector<std::uint32_t>> parse_taxon_path(std::string_view text) {
    std::vector<std::uint32_t> path;
    for (auto part : detail::split(text, '/')) {
        auto id = detail::parse_integer<std::uint32_t>(part);
        if (!id) return std::nullopt;
        for (auto existing : path)
            if (existing == *id) return std::nullopt;
        path.push_back(*id);
    }
    return path;
}

inline std::string format_taxon_path(std::span<const std::uint32_t> path) {
    std::string out;
    for (std::size_t i = 0; i < path.size(); ++i) {
        if (i) out += '/';
        out += std::to_string(path[i]);
    }
    return out;
}

/// Parses one metadata line; `line_no` is 1-based and only used for messages.
inline ObservationRecord parse_metadata_line(std::string_view line, std::size_t line_no) {
    auto where = [&] { return "metadata line " + std::to_string(line_no) + ": "; };
    auto fields = detail::split(line, '\t');
    if (fields.size() != 6)
        throw error(errc::parse, where() + "expected 6 tab-separated fields, found " +
                                     std::to_string(fields.size()));
    ObservationRecord rec;
    auto id = detail::parse_integer<std::uint64_t>(fields[0]);
    if (!id) throw error(errc::parse, where() + "bad observation_id '" + std::string(fields[0]) + "'");
    rec.observation_id = *id;
    auto path = parse_taxon_path(fields[1]);
    if (!path) throw error(errc::parse, where() + "bad taxon_path '" + std::string(fields[1]) + "'");
    rec.taxon_path = std::move(*path);
    auto date = parse_date(fields[2]);
    if (!date) throw error(errc::parse, where() + "bad observed_at '" + std::string(fields[2]) + "'");
    rec.observed_at = *date;
    if (fields[3].empty() != fields[4].empty())
        throw error(errc::parse, where() + "latitude and longitude must both be present or both empty");
    if (!fields[3].empty()) {
        auto lat = detail::parse_double(fields[3]);
        auto lon = detail::parse_double(fields[4]);
        if (!lat || !lon) throw error(errc::parse, where() + "bad coordinates");
        if (*lat < -90.0 || *lat > 90.0)
            throw error(errc::range, where() + "latitude " + std::string(fields[3]) + " outside [-90, 90]");
        if (*lon < -180.0 || *lon > 180.0)
            throw error(errc::range, where() + "longitude " + std::string(fields[4]) + " outside [-180, 180]");
        rec.location = GeoPoint{*lat, *lon};
    }
    rec.image_url = std::string(fields[5]);
    return rec;
}

inline std::vector<ObservationRecord> load_metadata(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error(errc::io, "cannot open " + path);
    std::vector<ObservationRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        records.push_back(parse_metadata_line(line, line_no));
    }
    return records;
}

inline std::string format_metadata_line(const ObservationRecord& rec) {
    std::string out = std::to_string(rec.observation_id);
    out += '\t';
    out += format_taxon_path(rec.taxon_path);
    out += '\t';
    out += format_date(rec.observed_at);
    out += '\t';
    if (rec.location) out += detail::format_double(rec.location->latitude);
    out += '\t';
    if (rec.location) out += detail::format_double(rec.location->longitude);
    out += '\t';
    out += rec.image_url;
    return out;
}

inline void save_metadata(std::span<const ObservationRecord> records, const std::string& path) {
    std::string out;
    for (const auto& rec : records) {
        out += format_metadata_line(rec);
        out += '\n';
    }
    detail::write_file(path, out);
}

/// Rounds to the nearest 0.01 degree, ties away from zero.
inline double quantize_coord(double degrees) {
    if (!std::isfinite(degrees)) throw error(errc::domain, "coordinate is not finite");
    return std::round(degrees * 100.0) / 100.0;
}

inline void quantize_coordinates(std::span<ObservationRecord> records) {
    for (auto& rec : records) {
        if (!rec.location) continue;
        rec.location->latitude = quantize_coord(rec.location->latitude);
        rec.location->longitude = quantize_coord(rec.location->longitude);
    }
}

/// Observation metadata positionally aligned with embedding rows.
class Corpus {
  public:
    Corpus() = default;

    std::size_t size() const noexcept { return records_.size(); }
    std::size_t dim() const noexcept { return embeddings_.dim(); }
    const std::vector<ObservationRecord>& records() const noexcept { return records_; }
    const ObservationRecord& record(std::size_t position) const { return records_[position]; }
    const EmbeddingMatrix& embeddings() const noexcept { return embeddings_; }
    std::span<const std::uint64_t> ids() const noexcept { return ids_; }

    std::optional<std::uint32_t> position_of(std::uint64_t observation_id) const {
        auto it = positions_.find(observation_id);
        if (it == positions_.end()) return std::nullopt;
        return it->second;
    }

  private:
    friend Corpus build_corpus(EmbeddingMatrix, std::vector<ObservationRecord>);

    std::vector<ObservationRecord> records_;
    EmbeddingMatrix embeddings_;
    std::vector<std::uint64_t> ids_;
    std::unordered_map<std::uint64_t, std::uint32_t> positions_;
};

inline Corpus build_corpus(EmbeddingMatrix embeddings, std::vector<ObservationRecord> records) {
    if (embeddings.count() != records.size())
        throw error(errc::alignment, std::to_string(embeddings.count()) + " embedding rows but " +
                                         std::to_string(records.size()) + " metadata records");
    if (records.size() > std::numeric_limits<std::uint32_t>::max())
        throw error(errc::capacity, "corpus exceeds 2^32-1 positions");
    Corpus c;
    c.ids_.reserve(records.size());
    c.positions_.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        if (rec.taxon_path.empty())
            throw error(errc::parse, "observation " + std::to_string(rec.observation_id) +
                                         " has an empty taxon_path");
        if (!c.positions_.emplace(rec.observation_id, static_cast<std::uint32_t>(i)).second)
            throw error(errc::uniqueness,
                        "duplicate observation_id " + std::to_string(rec.observation_id));
        c.ids_.push_back(rec.observation_id);
    }
    c.records_ = std::move(records);
    c.embeddings_ = std::move(embeddings);
    return c;
}

} // namespace ecosearch
