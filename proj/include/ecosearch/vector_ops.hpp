#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace ecosearch {

/// Inner product with a fixed eight-lane accumulation order. Every scoring path
/// (IVF scan, brute force, filtered scan) goes through this function, so equal
/// inputs always produce bit-identical scores regardless of the path taken.
inline float dot(const float* a, const float* b, std::size_t n) noexcept {
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    for (std::size_t j = 0; i < n; ++i, ++j) acc[j] += a[i] * b[i];
    return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

inline float dot(std::span<const float> a, std::span<const float> b) noexcept {
    return dot(a.data(), b.data(), a.size());
}

/// L2 norm accumulated in double.
inline double l2_norm(std::span<const float> v) noexcept {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

inline float squared_l2(const float* a, const float* b, std::size_t n) noexcept {
    float s = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        float d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// Scales `v` to unit length. Returns false (leaving `v` untouched) for a zero
/// or non-finite norm.
inline bool normalize_in_place(std::span<float> v) noexcept {
    double norm = l2_norm(v);
    if (!(norm > 0.0) || !std::isfinite(norm)) return false;
    for (float& x : v) x = static_cast<float>(x / norm);
    return true;
}

} // namespace ecosearch
