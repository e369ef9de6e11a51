#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "pgpc/common.hpp"
#include "pgpc/sparse/tensor.hpp"

namespace pgpc {

using Vec3 = Eigen::Vector3d;

struct PointCloud {
    std::vector<Vec3> points;
    std::optional<int> precision;  // bit depth when points are lattice integers

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::int32_t, 3>> faces;

    double face_area(std::size_t f) const {
        const auto& t = faces[f];
        return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
    }
    double total_area() const {
        double a = 0;
        for (std::size_t f = 0; f < faces.size(); ++f) a += face_area(f);
        return a;
    }
    void validate() const {
        const auto n = static_cast<std::int32_t>(vertices.size());
        for (const auto& f : faces)
            for (auto i : f)
                if (i < 0 || i >= n) throw ContractError("face references a missing vertex");
    }
    // Drops zero-area faces.
    void drop_degenerate_faces(double eps = 0.0) {
        std::vector<std::array<std::int32_t, 3>> kept;
        for (std::size_t f = 0; f < faces.size(); ++f)
            if (face_area(f) > eps) kept.push_back(faces[f]);
        faces = std::move(kept);
    }
};

inline std::vector<Coord3> to_coords(const PointCloud& cloud) {
    std::vector<Coord3> out;
    out.reserve(cloud.size());
    for (const auto& p : cloud.points)
        out.push_back({static_cast<std::int32_t>(std::lround(p.x())), static_cast<std::int32_t>(std::lround(p.y())),
                       static_cast<std::int32_t>(std::lround(p.z()))});
    return out;
}

inline PointCloud from_coords(const std::vector<Coord3>& coords, std::optional<int> precision) {
    PointCloud c;
    c.precision = precision;
    c.points.reserve(coords.size());
    for (auto v : coords) c.points.emplace_back(v.x, v.y, v.z);
    return c;
}

}  // namespace pgpc
