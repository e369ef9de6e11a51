#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "pgpc/common.hpp"

namespace pgpc {

struct Coord3 {
    std::int32_t x = 0, y = 0, z = 0;

    friend auto operator<=>(const Coord3&, const Coord3&) = default;
    friend Coord3 operator+(Coord3 a, Coord3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Coord3 operator-(Coord3 a, Coord3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
};

// Componentwise floor(c / 2); arithmetic shift floors negative values too.
inline Coord3 halve(Coord3 c) { return {c.x >> 1, c.y >> 1, c.z >> 1}; }
inline Coord3 twice(Coord3 c) { return {c.x * 2, c.y * 2, c.z * 2}; }

struct Coord3Hash {
    std::size_t operator()(const Coord3& c) const noexcept {
        std::uint64_t h = static_cast<std::uint32_t>(c.x);
        h = h * 0x9E3779B185EBCA87ull ^ static_cast<std::uint32_t>(c.y);
        h = h * 0xC2B2AE3D27D4EB4Full ^ static_cast<std::uint32_t>(c.z);
        return static_cast<std::size_t>(h ^ (h >> 29));
    }
};

using CoordIndex = std::unordered_map<Coord3, std::int32_t, Coord3Hash>;

inline CoordIndex make_index(const std::vector<Coord3>& coords) {
    CoordIndex idx;
    idx.reserve(coords.size() * 2);
    for (std::size_t i = 0; i < coords.size(); ++i) idx.emplace(coords[i], static_cast<std::int32_t>(i));
    return idx;
}

// Sorts and removes duplicates in place.
inline void canonicalize(std::vector<Coord3>& coords) {
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
}

inline bool is_canonical(const std::vector<Coord3>& coords) {
    for (std::size_t i = 1; i < coords.size(); ++i)
        if (!(coords[i - 1] < coords[i])) return false;
    return true;
}

// Unique floor-halved coordinates (one octree level up), sorted.
inline std::vector<Coord3> downsample_coords(const std::vector<Coord3>& coords) {
    std::vector<Coord3> out;
    out.reserve(coords.size());
    for (auto c : coords) out.push_back(halve(c));
    canonicalize(out);
    return out;
}

// Coordinate set with one feature row per coordinate (row-major, `channels` wide).
template <class T>
struct SparseTensor {
    std::vector<Coord3> coords;
    std::vector<T> feats;
    int channels = 0;
    int scale = 0;

    SparseTensor() = default;
    SparseTensor(std::vector<Coord3> c, int ch, int sc = 0)
        : coords(std::move(c)), feats(coords.size() * static_cast<std::size_t>(ch), T(0)), channels(ch), scale(sc) {}
    SparseTensor(std::vector<Coord3> c, std::vector<T> f, int ch, int sc = 0)
        : coords(std::move(c)), feats(std::move(f)), channels(ch), scale(sc) {
        if (feats.size() != coords.size() * static_cast<std::size_t>(ch))
            throw ContractError("feature row count does not match coordinate count");
    }

    std::size_t size() const { return coords.size(); }
    bool empty() const { return coords.empty(); }
    T* row(std::size_t i) { return feats.data() + i * static_cast<std::size_t>(channels); }
    const T* row(std::size_t i) const { return feats.data() + i * static_cast<std::size_t>(channels); }

    // Checks the structural invariants: sorted unique coords, matching rows, finite values.
    bool valid() const {
        if (feats.size() != coords.size() * static_cast<std::size_t>(channels)) return false;
        if (!is_canonical(coords)) return false;
        for (T v : feats)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class U>
    SparseTensor<U> cast() const {
        return SparseTensor<U>(coords, std::vector<U>(feats.begin(), feats.end()), channels, scale);
    }
};

// Builds a tensor from arbitrary (coord, feature row) pairs; sorts rows by coordinate.
// Duplicate coordinates are rejected.
template <class T>
SparseTensor<T> make_tensor(std::vector<Coord3> coords, std::vector<T> feats, int channels, int scale = 0) {
    std::vector<std::size_t> order(coords.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return coords[a] < coords[b]; });
    SparseTensor<T> t;
    t.channels = channels;
    t.scale = scale;
    t.coords.reserve(coords.size());
    t.feats.reserve(feats.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (k > 0 && coords[order[k]] == coords[order[k - 1]]) throw ContractError("duplicate coordinate");
        t.coords.push_back(coords[order[k]]);
        auto* src = feats.data() + order[k] * static_cast<std::size_t>(channels);
        t.feats.insert(t.feats.end(), src, src + channels);
    }
    return t;
}

}  // namespace pgpc
