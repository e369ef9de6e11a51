#pragma once

#include <cmath>
#include <limits>
#include <optional>

#include "pgpc/geometry/point_cloud.hpp"

namespace pgpc {

// Axis-aligned cube used for normalisation: [min, min + extent) on every axis.
struct VoxelBox {
    Vec3 min = Vec3::Zero();
    double extent = 1.0;
};

inline VoxelBox bounding_box(const PointCloud& cloud) {
    if (cloud.empty()) throw DegenerateInputError("cannot voxelize an empty cloud");
    Vec3 lo = cloud.points[0], hi = cloud.points[0];
    for (const auto& p : cloud.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return {lo, (hi - lo).maxCoeff()};
}

inline bool is_lattice_cloud(const PointCloud& cloud, int p) {
    const double side = std::ldexp(1.0, p);
    for (const auto& v : cloud.points)
        for (int k = 0; k < 3; ++k)
            if (v[k] != std::floor(v[k]) || v[k] < 0 || v[k] >= side) return false;
    return true;
}

inline PointCloud canonical_lattice(std::vector<Coord3> coords, int p) {
    canonicalize(coords);
    return from_coords(coords, p);
}

namespace detail {
inline PointCloud voxelize_impl(const PointCloud& cloud, int p, const VoxelBox& box, bool drop_outside) {
    if (p < 1 || p > 16) throw RangeError("voxelization bit depth must be in [1, 16]");
    if (!(box.extent > 0) || !std::isfinite(box.extent)) throw DegenerateInputError("voxelization extent is zero");
    const std::int32_t side = 1 << p;
    const double scale = static_cast<double>(side) / box.extent;
    std::vector<Coord3> coords;
    coords.reserve(cloud.size());
    for (const auto& v : cloud.points) {
        std::int32_t c[3];
        bool inside = true;
        for (int k = 0; k < 3; ++k) {
            double q = std::floor((v[k] - box.min[k]) * scale);
            if (q < 0 || q >= side) {
                inside = false;
                q = std::clamp(q, 0.0, static_cast<double>(side - 1));
            }
            c[k] = static_cast<std::int32_t>(q);
        }
        if (!inside && drop_outside) continue;
        coords.push_back({c[0], c[1], c[2]});
    }
    return canonical_lattice(std::move(coords), p);
}
}  // namespace detail

// Maps a cloud onto the 2^p lattice with an isotropic extent (the largest axis range).
// The maximum point lands on 2^p and is clamped to 2^p - 1. Lattice clouds already at
// depth p only get sorted and deduplicated.
inline PointCloud voxelize(const PointCloud& cloud, int p) {
    if (p < 1 || p > 16) throw RangeError("voxelization bit depth must be in [1, 16]");
    if (cloud.precision == p && is_lattice_cloud(cloud, p)) return canonical_lattice(to_coords(cloud), p);
    return detail::voxelize_impl(cloud, p, bounding_box(cloud), false);
}

// Same mapping against a caller-supplied box; points outside the box are dropped.
inline PointCloud voxelize(const PointCloud& cloud, int p, const VoxelBox& box) {
    return detail::voxelize_impl(cloud, p, box, true);
}

// Box that makes voxelize() the identity floor on lattice units [0, 2^p).
inline VoxelBox lattice_box(int p) { return {Vec3::Zero(), std::ldexp(1.0, p)}; }

}  // namespace pgpc
