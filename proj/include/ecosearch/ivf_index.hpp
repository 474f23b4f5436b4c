#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ecosearch/embedding_store.hpp"
#include "ecosearch/error.hpp"
#include "ecosearch/kmeans.hpp"
#include "ecosearch/mapped_file.hpp"
#include "ecosearch/vector_ops.hpp"

namespace ecosearch {

enum class Quantization : std::uint8_t { none = 0, int8 = 1 };

struct SearchHit {
    std::uint32_t vector_position = 0;
    std::uint64_t observation_id = 0;
    float score = 0.0f;

    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Result order: descending score, then ascending observation_id.
constexpr bool ranks_before(const SearchHit& a, const SearchHit& b) noexcept {
    return a.score > b.score || (a.score == b.score && a.observation_id < b.observation_id);
}

/// Bounded collector keeping the best `k` hits under `ranks_before`.
class TopK {
  public:
    explicit TopK(std::size_t k) : k_(k) { heap_.reserve(std::min<std::size_t>(k, 1 << 16)); }

    void push(const SearchHit& hit) {
        if (heap_.size() < k_) {
            heap_.push_back(hit);
            std::push_heap(heap_.begin(), heap_.end(), ranks_before);
        } else if (ranks_before(hit, heap_.front())) {
            std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
            heap_.back() = hit;
            std::push_heap(heap_.begin(), heap_.end(), ranks_before);
        }
    }

    std::size_t size() const noexcept { return heap_.size(); }

    std::vector<SearchHit> take_sorted() && {
        std::sort(heap_.begin(), heap_.end(), ranks_before);
        return std::move(heap_);
    }

  private:
    std::size_t k_;
    std::vector<SearchHit> heap_;
};

inline constexpr double query_norm_tolerance = 1e-3;

namespace detail {

inline void check_query(std::span<const float> query, std::size_t dim, std::size_t k) {
    if (query.size() != dim)
        throw error(errc::shape, "query has dim " + std::to_string(query.size()) + ", index has " +
                                     std::to_string(dim));
    double norm = l2_norm(query);
    if (!(std::abs(norm - 1.0) <= query_norm_tolerance))
        throw error(errc::normalization, "query norm " + std::to_string(norm) + " is not unit");
    if (k == 0) throw error(errc::domain, "k must be at least 1");
}

inline void check_ids(std::span<const std::uint64_t> ids, std::uint64_t expected) {
    if (ids.size() != expected)
        throw error(errc::alignment, "id table has " + std::to_string(ids.size()) +
                                         " entries, index holds " + std::to_string(expected));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Index file: "INQI" | u32 version | u32 dim | u32 nlist | u8 quantization |
// u64 total_vectors | centroids (nlist*dim f32) | directory (nlist * {u64
// offset, u64 length}) | list payloads at 64-byte aligned offsets.
// A float list is `length` entries of {u32 position, f32*dim}. An int8 list is
// one f32 scale followed by `length` entries of {u32 position, i8*dim}.
// ---------------------------------------------------------------------------

inline constexpr char index_magic[4] = {'I', 'N', 'Q', 'I'};
inline constexpr std::uint32_t index_format_version = 1;
inline constexpr std::size_t index_header_size = 25;
inline constexpr std::size_t list_alignment = 64;
inline constexpr std::size_t residency_granularity = std::size_t{2} << 20;

/// Inverted-file index. The in-memory build and the memory-mapped view share
/// one representation: the serialized file image. Searches over either walk
/// the same bytes through the same code.
class IvfIndex {
  public:
    struct ListRef {
        std::uint64_t offset = 0;
        std::uint64_t length = 0;
    };

    IvfIndex() = default;

    std::size_t dim() const noexcept { return centroids_.dim; }
    std::size_t nlist() const noexcept { return centroids_.nlist; }
    std::uint64_t total_vectors() const noexcept { return total_; }
    Quantization quantization() const noexcept { return quantization_; }
    const Centroids& centroids() const noexcept { return centroids_; }
    std::size_t list_size(std::size_t list) const { return lists_[list].length; }
    bool is_mapped() const noexcept { return mapped_ != nullptr; }

    /// Serialized image; identical to the bytes `save_index` writes.
    std::span<const std::byte> image() const noexcept { return image_; }

    std::size_t entry_stride() const noexcept {
        return sizeof(std::uint32_t) +
               (quantization_ == Quantization::int8 ? dim() : dim() * sizeof(float));
    }

    /// Caps how many list bytes a mapped index may touch before the process
    /// drops its resident pages of the mapping. Zero disables the cap.
    void set_residency_budget(std::size_t bytes) { residency_->budget = bytes; }
    std::size_t residency_budget() const noexcept { return residency_->budget; }

    /// Lists with the highest centroid inner product, best first.
    std::vector<std::uint32_t> probe_order(std::span<const float> query, std::size_t nprobe) const {
        std::vector<std::pair<float, std::uint32_t>> scored(nlist());
        for (std::size_t j = 0; j < nlist(); ++j)
            scored[j] = {dot(centroids_.row(j).data(), query.data(), dim()),
                         static_cast<std::uint32_t>(j)};
        auto better = [](const auto& a, const auto& b) {
            return a.first > b.first || (a.first == b.first && a.second < b.second);
        };
        nprobe = std::min(nprobe, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(nprobe),
                          scored.end(), better);
        std::vector<std::uint32_t> out(nprobe);
        for (std::size_t i = 0; i < nprobe; ++i) out[i] = scored[i].second;
        return out;
    }

    /// Calls `visit(position, score)` for every entry of `list`.
    template <class Visitor>
    void scan_list(std::size_t list, std::span<const float> query, Visitor&& visit) const {
        const ListRef ref = lists_[list];
        const std::byte* p = image_.data() + ref.offset;
        const std::size_t d = dim();
        if (quantization_ == Quantization::none) {
            const std::size_t stride = entry_stride();
            for (std::uint64_t e = 0; e < ref.length; ++e, p += stride) {
                std::uint32_t pos;
                std::memcpy(&pos, p, sizeof pos);
                auto vec = reinterpret_cast<const float*>(p + sizeof pos);
                visit(pos, dot(vec, query.data(), d));
            }
        } else {
            float scale;
            std::memcpy(&scale, p, sizeof scale);
            p += sizeof scale;
            const std::size_t stride = entry_stride();
            std::vector<float> dequantized(d);
            for (std::uint64_t e = 0; e < ref.length; ++e, p += stride) {
                std::uint32_t pos;
                std::memcpy(&pos, p, sizeof pos);
                auto q = reinterpret_cast<const std::int8_t*>(p + sizeof pos);
                for (std::size_t i = 0; i < d; ++i) dequantized[i] = static_cast<float>(q[i]) * scale;
                visit(pos, std::clamp(dot(dequantized.data(), query.data(), d), -1.0f, 1.0f));
            }
        }
        note_touched(ref);
    }

    /// Stored (dequantized when int8) vector of entry `entry` in `list`.
    std::vector<float> stored_vector(std::size_t list, std::size_t entry) const {
        const ListRef ref = lists_[list];
        std::vector<float> out(dim());
        const std::byte* base = image_.data() + ref.offset;
        if (quantization_ == Quantization::none) {
            std::memcpy(out.data(), base + entry * entry_stride() + sizeof(std::uint32_t),
                        dim() * sizeof(float));
        } else {
            float scale;
            std::memcpy(&scale, base, sizeof scale);
            auto q = reinterpret_cast<const std::int8_t*>(base + sizeof scale + entry * entry_stride() +
                                                          sizeof(std::uint32_t));
            for (std::size_t i = 0; i < dim(); ++i) out[i] = static_cast<float>(q[i]) * scale;
        }
        return out;
    }

    std::uint32_t stored_position(std::size_t list, std::size_t entry) const {
        const ListRef ref = lists_[list];
        std::size_t head = quantization_ == Quantization::int8 ? sizeof(float) : 0;
        std::uint32_t pos;
        std::memcpy(&pos, image_.data() + ref.offset + head + entry * entry_stride(), sizeof pos);
        return pos;
    }

    /// Top-k over the `nprobe` best lists. `ids` maps positions to observation
    /// ids and must cover every indexed position.
    std::vector<SearchHit> search(std::span<const float> query, std::size_t k, std::size_t nprobe,
                                  std::span<const std::uint64_t> ids) const {
        detail::check_query(query, dim(), k);
        if (nprobe < 1 || nprobe > nlist())
            throw error(errc::domain, "nprobe " + std::to_string(nprobe) + " outside [1, " +
                                          std::to_string(nlist()) + "]");
        detail::check_ids(ids, total_);
        TopK top(k);
        for (auto list : probe_order(query, nprobe))
            scan_list(list, query, [&](std::uint32_t pos, float score) {
                top.push({pos, ids[pos], score});
            });
        return std::move(top).take_sorted();
    }

  private:
    friend IvfIndex build_ivf(const Corpus&, const Centroids&, Quantization);
    friend IvfIndex open_index(const std::string&);
    friend IvfIndex parse_index_image(std::shared_ptr<const void>, std::span<const std::byte>,
                                      std::shared_ptr<const MappedFile>, const std::string&);

    struct Residency {
        std::size_t budget = 0;
        std::atomic<std::size_t> touched{0};
    };

    void note_touched(const ListRef& ref) const {
        if (mapped_ == nullptr || residency_->budget == 0) return;
        // Faults may map whole large folios, so charge the span rounded out
        // to residency_granularity on both ends.
        std::size_t head = quantization_ == Quantization::int8 ? sizeof(float) : 0;
        std::size_t begin = ref.offset / residency_granularity * residency_granularity;
        std::size_t end = ref.offset + head + ref.length * entry_stride();
        std::size_t bytes = (end + residency_granularity - 1) / residency_granularity * residency_granularity - begin;
        std::size_t now = residency_->touched.fetch_add(bytes, std::memory_order_relaxed) + bytes;
        if (now > residency_->budget) {
            residency_->touched.store(0, std::memory_order_relaxed);
            mapped_->release_resident_pages();
        }
    }

    Centroids centroids_;
    std::vector<ListRef> lists_;
    std::uint64_t total_ = 0;
    Quantization quantization_ = Quantization::none;
    std::span<const std::byte> image_;
    std::shared_ptr<const void> owner_;
    std::shared_ptr<const MappedFile> mapped_;
    std::shared_ptr<Residency> residency_ = std::make_shared<Residency>();
};

inline constexpr std::size_t align_up(std::size_t n, std::size_t a) { return (n + a - 1) / a * a; }

/// Validates an index image and builds the lightweight header/directory view
/// over it. Reads only the header, centroids and directory.
inline IvfIndex parse_index_image(std::shared_ptr<const void> owner, std::span<const std::byte> bytes,
                                  std::shared_ptr<const MappedFile> mapped, const std::string& name) {
    if (bytes.size() < index_header_size || std::memcmp(bytes.data(), index_magic, 4) != 0)
        throw error(errc::format, name + ": not an index file (bad magic)");
    auto version = detail::read_pod<std::uint32_t>(bytes, 4);
    if (version != index_format_version)
        throw error(errc::format, name + ": unsupported index version " + std::to_string(version));
    IvfIndex ix;
    std::uint32_t dim = detail::read_pod<std::uint32_t>(bytes, 8);
    std::uint32_t nlist = detail::read_pod<std::uint32_t>(bytes, 12);
    auto quant = detail::read_pod<std::uint8_t>(bytes, 16);
    if (quant > 1) throw error(errc::format, name + ": unknown quantization tag " + std::to_string(quant));
    if (dim == 0 || nlist == 0) throw error(errc::format, name + ": zero dim or nlist");
    ix.quantization_ = static_cast<Quantization>(quant);
    ix.total_ = detail::read_pod<std::uint64_t>(bytes, 17);

    std::size_t centroid_bytes = std::size_t{nlist} * dim * sizeof(float);
    std::size_t dir_offset = index_header_size + centroid_bytes;
    std::size_t dir_bytes = std::size_t{nlist} * 2 * sizeof(std::uint64_t);
    if (bytes.size() < dir_offset + dir_bytes)
        throw error(errc::corruption, name + ": truncated before end of list directory");

    ix.centroids_ = Centroids{nlist, dim, std::vector<float>(std::size_t{nlist} * dim)};
    std::memcpy(ix.centroids_.data.data(), bytes.data() + index_header_size, centroid_bytes);
    for (float v : ix.centroids_.data)
        if (!std::isfinite(v)) throw error(errc::corruption, name + ": non-finite centroid value");

    ix.lists_.resize(nlist);
    std::uint64_t sum = 0;
    const std::size_t head = ix.quantization_ == Quantization::int8 ? sizeof(float) : 0;
    const std::size_t stride = ix.entry_stride();
    for (std::size_t j = 0; j < nlist; ++j) {
        auto& ref = ix.lists_[j];
        ref.offset = detail::read_pod<std::uint64_t>(bytes, dir_offset + j * 16);
        ref.length = detail::read_pod<std::uint64_t>(bytes, dir_offset + j * 16 + 8);
        if (ref.offset % list_alignment != 0 || ref.offset < dir_offset + dir_bytes ||
            ref.length > bytes.size() / stride || ref.offset + head + ref.length * stride > bytes.size())
            throw error(errc::corruption, name + ": list " + std::to_string(j) + " lies outside the file");
        sum += ref.length;
    }
    if (sum != ix.total_)
        throw error(errc::corruption, name + ": list lengths sum to " + std::to_string(sum) +
                                          ", header says " + std::to_string(ix.total_));
    ix.image_ = bytes;
    ix.owner_ = std::move(owner);
    ix.mapped_ = std::move(mapped);
    return ix;
}

/// Assigns every corpus vector to its nearest centroid (ties to the lowest
/// list) and lays the lists out in the on-disk format.
inline IvfIndex build_ivf(const Corpus& corpus, const Centroids& centroids, Quantization quantization) {
    const std::size_t dim = corpus.dim(), nlist = centroids.nlist;
    if (centroids.dim != dim)
        throw error(errc::shape, "centroid dim " + std::to_string(centroids.dim) +
                                     " does not match corpus dim " + std::to_string(dim));
    if (nlist == 0) throw error(errc::capacity, "no centroids");

    std::vector<std::vector<std::uint32_t>> members(nlist);
    const auto& x = corpus.embeddings();
    for (std::size_t i = 0; i < corpus.size(); ++i)
        members[nearest_centroid(centroids, x.row(i).data()).cluster].push_back(
            static_cast<std::uint32_t>(i));

    const bool int8 = quantization == Quantization::int8;
    const std::size_t head = int8 ? sizeof(float) : 0;
    const std::size_t stride = sizeof(std::uint32_t) + (int8 ? dim : dim * sizeof(float));

    std::size_t dir_offset = index_header_size + nlist * dim * sizeof(float);
    std::size_t cursor = dir_offset + nlist * 16;
    std::vector<IvfIndex::ListRef> refs(nlist);
    for (std::size_t j = 0; j < nlist; ++j) {
        cursor = align_up(cursor, list_alignment);
        refs[j] = {cursor, members[j].size()};
        cursor += head + members[j].size() * stride;
    }

    auto image = std::make_shared<std::string>();
    std::string& out = *image;
    out.reserve(cursor);
    out.append(index_magic, 4);
    detail::append_pod(out, index_format_version);
    detail::append_pod(out, static_cast<std::uint32_t>(dim));
    detail::append_pod(out, static_cast<std::uint32_t>(nlist));
    detail::append_pod(out, static_cast<std::uint8_t>(quantization));
    detail::append_pod(out, static_cast<std::uint64_t>(corpus.size()));
    out.append(reinterpret_cast<const char*>(centroids.data.data()), nlist * dim * sizeof(float));
    for (const auto& ref : refs) {
        detail::append_pod(out, ref.offset);
        detail::append_pod(out, ref.length);
    }
    std::vector<std::int8_t> q(dim);
    for (std::size_t j = 0; j < nlist; ++j) {
        out.resize(refs[j].offset, '\0');
        if (int8) {
            float max_abs = 0.0f;
            for (auto pos : members[j])
                for (float v : x.row(pos)) max_abs = std::max(max_abs, std::abs(v));
            float scale = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
            detail::append_pod(out, scale);
            for (auto pos : members[j]) {
                detail::append_pod(out, pos);
                auto row = x.row(pos);
                for (std::size_t d = 0; d < dim; ++d)
                    q[d] = static_cast<std::int8_t>(std::clamp(std::lround(row[d] / scale), -127L, 127L));
                out.append(reinterpret_cast<const char*>(q.data()), dim);
            }
        } else {
            for (auto pos : members[j]) {
                detail::append_pod(out, pos);
                out.append(reinterpret_cast<const char*>(x.row(pos).data()), dim * sizeof(float));
            }
        }
    }
    auto bytes = std::as_bytes(std::span<const char>(out.data(), out.size()));
    return parse_index_image(std::move(image), bytes, nullptr, "in-memory index");
}

inline void save_index(const IvfIndex& index, const std::string& path) {
    auto img = index.image();
    detail::write_file(path, std::string_view(reinterpret_cast<const char*>(img.data()), img.size()));
}

/// Memory-maps an index file. Only the header, centroids and directory are
/// read; list payloads are paged in as searches touch them.
inline IvfIndex open_index(const std::string& path) {
    auto file = std::make_shared<const MappedFile>(path);
    auto bytes = file->bytes();
    return parse_index_image(file, bytes, file, path);
}

/// Exact top-k by inner product over the whole corpus.
inline std::vector<SearchHit> brute_force_search(const Corpus& corpus, std::span<const float> query,
                                                 std::size_t k) {
    if (corpus.size() == 0) return {};
    detail::check_query(query, corpus.dim(), k);
    TopK top(k);
    const auto& x = corpus.embeddings();
    auto ids = corpus.ids();
    for (std::size_t i = 0; i < corpus.size(); ++i)
        top.push({static_cast<std::uint32_t>(i), ids[i], dot(x.row(i).data(), query.data(), x.dim())});
    return std::move(top).take_sorted();
}

/// Exact top-k restricted to `positions`.
inline std::vector<SearchHit> brute_force_search(const Corpus& corpus, std::span<const float> query,
                                                 std::size_t k, std::span<const std::uint32_t> positions) {
    if (positions.empty()) return {};
    detail::check_query(query, corpus.dim(), k);
    TopK top(k);
    const auto& x = corpus.embeddings();
    auto ids = corpus.ids();
    for (auto pos : positions)
        top.push({pos, ids[pos], dot(x.row(pos).data(), query.data(), x.dim())});
    return std::move(top).take_sorted();
}

} // namespace ecosearch
