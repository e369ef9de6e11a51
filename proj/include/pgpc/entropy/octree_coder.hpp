#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pgpc/common.hpp"
#include "pgpc/entropy/range_coder.hpp"
#include "pgpc/sparse/tensor.hpp"

namespace pgpc {

// Child k of a node covers offset ((k>>2)&1, (k>>1)&1, k&1); bit (7 - k) of the occupancy
// byte marks it occupied, so the origin child is the most significant bit.
inline int child_index(Coord3 c, int bit) {
    return (((c.x >> bit) & 1) << 2) | (((c.y >> bit) & 1) << 1) | ((c.z >> bit) & 1);
}

// Breadth-first occupancy bytes of the octree over [0, 2^depth)^3.
inline std::vector<std::uint8_t> octree_occupancy(std::vector<Coord3> coords, int depth) {
    const std::int32_t side = depth >= 31 ? 0 : (1 << depth);
    for (auto c : coords)
        if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= side || c.y >= side || c.z >= side)
            throw ContractError("coordinate outside the octree cube");
    // Morton-sort so that every node's descendants are contiguous, then walk level by level.
    auto morton_less = [depth](const Coord3& a, const Coord3& b) {
        for (int bit = depth - 1; bit >= 0; --bit) {
            int ka = child_index(a, bit), kb = child_index(b, bit);
            if (ka != kb) return ka < kb;
        }
        return false;
    };
    std::sort(coords.begin(), coords.end(), morton_less);
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    std::vector<std::uint8_t> bytes;
    if (coords.empty()) return bytes;
    std::vector<std::pair<std::size_t, std::size_t>> nodes{{0, coords.size()}};
    for (int level = 0; level < depth; ++level) {
        const int bit = depth - 1 - level;
        std::vector<std::pair<std::size_t, std::size_t>> next;
        next.reserve(nodes.size() * 2);
        for (auto [b, e] : nodes) {
            std::uint8_t occ = 0;
            std::size_t i = b;
            while (i < e) {
                int k = child_index(coords[i], bit);
                std::size_t j = i;
                while (j < e && child_index(coords[j], bit) == k) ++j;
                occ |= static_cast<std::uint8_t>(0x80u >> k);
                next.push_back({i, j});
                i = j;
            }
            bytes.push_back(occ);
        }
        nodes = std::move(next);
    }
    return bytes;
}

// Layout: u8 depth, varint point count, range-coded occupancy bits (one adaptive
// binary context per child position).
inline std::vector<std::uint8_t> encode_coords(const std::vector<Coord3>& coords, int depth) {
    if (depth < 0 || depth > 24) throw ContractError("octree depth must be in [0, 24]");
    auto occ = octree_occupancy(coords, depth);
    std::size_t count = 0;
    {
        std::vector<Coord3> u = coords;
        canonicalize(u);
        count = u.size();
    }
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(depth));
    w.varint(count);
    if (count == 0) return w.take();
    if (depth == 0) return w.take();
    RangeEncoder enc;
    std::array<AdaptiveBit, 8> ctx{};
    for (std::uint8_t b : occ) {
        for (int k = 0; k < 8; ++k) {
            int bit = (b >> (7 - k)) & 1;
            enc.encode_bit(bit, ctx[k].p0());
            ctx[k].update(bit);
        }
    }
    w.bytes(enc.finish());
    return w.take();
}

// Returns the decoded coordinates sorted lexicographically.
inline std::vector<Coord3> decode_coords(std::span<const std::uint8_t> bytes, int* depth_out = nullptr) {
    ByteReader r(bytes);
    const int depth = r.u8();
    if (depth > 24) throw DecodeError("octree depth out of range");
    const std::uint64_t count = r.varint();
    if (depth_out) *depth_out = depth;
    if (count == 0) return {};
    if (depth == 0) {
        if (count != 1) throw DecodeError("depth-0 octree holds exactly one point");
        return {Coord3{0, 0, 0}};
    }
    if (count > (1ull << std::min(3 * depth, 40))) throw DecodeError("octree point count exceeds cube volume");
    auto payload = r.bytes(r.remaining());
    RangeDecoder dec(payload);
    std::array<AdaptiveBit, 8> ctx{};
    std::vector<Coord3> nodes{Coord3{0, 0, 0}};
    for (int level = 0; level < depth; ++level) {
        std::vector<Coord3> next;
        for (auto n : nodes) {
            std::uint8_t occ = 0;
            for (int k = 0; k < 8; ++k) {
                int bit = dec.decode_bit(ctx[k].p0());
                ctx[k].update(bit);
                if (bit) {
                    occ |= static_cast<std::uint8_t>(0x80u >> k);
                    next.push_back({n.x * 2 + ((k >> 2) & 1), n.y * 2 + ((k >> 1) & 1), n.z * 2 + (k & 1)});
                }
            }
            if (occ == 0) throw DecodeError("empty octree node");
            if (next.size() > count) throw DecodeError("octree expands beyond the declared point count");
            if (dec.overrun() > 8) throw DecodeError("coordinate stream ended early");
        }
        nodes = std::move(next);
    }
    if (nodes.size() != count) throw DecodeError("octree leaf count does not match the declared point count");
    std::sort(nodes.begin(), nodes.end());
    return nodes;
}

}  // namespace pgpc
