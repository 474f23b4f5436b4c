#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ecosearch/embedding_store.hpp"
#include "ecosearch/error.hpp"
#include "ecosearch/vector_ops.hpp"

namespace ecosearch {

/// Coarse quantizer: `nlist` unit-length centroids, row-major.
struct Centroids {
    std::size_t nlist = 0;
    std::size_t dim = 0;
    std::vector<float> data;

    std::span<const float> row(std::size_t i) const noexcept { return {data.data() + i * dim, dim}; }
    std::span<float> row(std::size_t i) noexcept { return {data.data() + i * dim, dim}; }
};

struct Assignment {
    std::uint32_t cluster = 0;
    float score = 0.0f;
};

/// Nearest centroid by inner product; ties go to the lowest cluster index.
inline Assignment nearest_centroid(const Centroids& c, const float* v) noexcept {
    Assignment best{0, -std::numeric_limits<float>::infinity()};
    for (std::size_t j = 0; j < c.nlist; ++j) {
        float s = dot(c.data.data() + j * c.dim, v, c.dim);
        if (s > best.score) best = {static_cast<std::uint32_t>(j), s};
    }
    return best;
}

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)), n - 1);
}

inline Centroids kmeans_plus_plus(const EmbeddingMatrix& x, std::size_t nlist, std::mt19937_64& rng) {
    const std::size_t n = x.count(), dim = x.dim();
    Centroids c{nlist, dim, std::vector<float>(nlist * dim)};
    std::vector<char> chosen(n, 0);
    auto take = [&](std::size_t slot, std::size_t i) {
        chosen[i] = 1;
        std::copy(x.row(i).begin(), x.row(i).end(), c.row(slot).begin());
    };
    std::size_t first = uniform_index(rng, n);
    take(0, first);
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i)
        d2[i] = squared_l2(x.row(i).data(), x.row(first).data(), dim);

    for (std::size_t slot = 1; slot < nlist; ++slot) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (!chosen[i]) total += d2[i];
        std::size_t pick = n;
        if (total > 0.0) {
            double target = uniform01(rng) * total;
            double cumulative = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i] || d2[i] <= 0.0) continue;
                cumulative += d2[i];
                pick = i;
                if (cumulative > target) break;
            }
        }
        if (pick == n) // every remaining point coincides with a chosen one
            for (std::size_t i = 0; i < n && pick == n; ++i)
                if (!chosen[i]) pick = i;
        take(slot, pick);
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min<double>(d2[i], squared_l2(x.row(i).data(), x.row(pick).data(), dim));
    }
    return c;
}

} // namespace detail

/// Spherical k-means: k-means++ seeding, then Lloyd iterations with inner-product
/// assignment and centroids renormalized to unit length after every update.
/// Stops at an assignment fixpoint or after `max_iters` updates. Empty clusters
/// take the point that is farthest (lowest inner product) from its own centroid.
inline Centroids train_kmeans(const EmbeddingMatrix& vectors, std::size_t nlist, std::uint64_t seed,
                              std::size_t max_iters) {
    const std::size_t n = vectors.count(), dim = vectors.dim();
    if (nlist == 0) throw error(errc::capacity, "nlist must be at least 1");
    if (nlist > n)
        throw error(errc::capacity, "nlist " + std::to_string(nlist) + " exceeds " +
                                        std::to_string(n) + " training vectors");
    if (max_iters == 0) throw error(errc::domain, "max_iters must be at least 1");

    std::mt19937_64 rng(seed);
    Centroids c = detail::kmeans_plus_plus(vectors, nlist, rng);

    std::vector<Assignment> assign(n);
    std::vector<std::size_t> counts(nlist);
    auto reassign = [&] {
        bool changed = false;
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            Assignment a = nearest_centroid(c, vectors.row(i).data());
            changed |= a.cluster != assign[i].cluster;
            assign[i] = a;
            ++counts[a.cluster];
        }
        return changed;
    };
    reassign();

    std::vector<double> sums(nlist * dim);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        for (std::size_t empty = 0; empty < nlist; ++empty) {
            if (counts[empty] != 0) continue;
            std::size_t victim = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[assign[i].cluster] < 2) continue;
                if (victim == n || assign[i].score < assign[victim].score) victim = i;
            }
            if (victim == n) break; // cannot happen while nlist <= n
            --counts[assign[victim].cluster];
            assign[victim] = {static_cast<std::uint32_t>(empty), 1.0f};
            ++counts[empty];
            std::copy(vectors.row(victim).begin(), vectors.row(victim).end(), c.row(empty).begin());
        }

        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = vectors.row(i);
            double* s = sums.data() + assign[i].cluster * dim;
            for (std::size_t d = 0; d < dim; ++d) s[d] += r[d];
        }
        std::vector<float> mean(dim);
        for (std::size_t j = 0; j < nlist; ++j) {
            for (std::size_t d = 0; d < dim; ++d) mean[d] = static_cast<float>(sums[j * dim + d]);
            if (normalize_in_place(mean)) std::copy(mean.begin(), mean.end(), c.row(j).begin());
        }

        if (!reassign()) break;
    }
    return c;
}

/// Deterministic subset of rows used when the corpus is larger than the
/// training budget. Rows keep their original relative order.
inline EmbeddingMatrix sample_rows(const EmbeddingMatrix& x, std::size_t max_rows, std::uint64_t seed) {
    if (x.count() <= max_rows) return x;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> idx(x.count());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < max_rows; ++i) {
        std::size_t j = i + detail::uniform_index(rng, idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(max_rows);
    std::sort(idx.begin(), idx.end());
    std::vector<float> values;
    values.reserve(max_rows * x.dim());
    for (auto i : idx) values.insert(values.end(), x.row(i).begin(), x.row(i).end());
    return EmbeddingMatrix(max_rows, x.dim(), std::move(values));
}

/// round(sqrt(count)) clamped to [1, 65536].
inline std::size_t default_nlist(std::size_t count) {
    auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(count))));
    return std::clamp<std::size_t>(n, 1, 65536);
}

inline std::size_t default_nprobe(std::size_t nlist) { return std::max<std::size_t>(1, nlist / 16); }

} // namespace ecosearch
