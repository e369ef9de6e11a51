#pragma once

#include <cmath>
#include <limits>
#include <queue>
#include <span>
#include <unordered_map>
#include <vector>

#include "pgpc/geometry/point_cloud.hpp"

namespace pgpc {

// Exact nearest-neighbour queries over a uniform hash grid. Shells of cells are visited
// in increasing Chebyshev radius until no unvisited cell can hold a closer point.
// Ties resolve to the smaller point index.
class NeighborGrid {
public:
    NeighborGrid() = default;

    explicit NeighborGrid(std::span<const Vec3> points, double cell = 0.0) : points_(points.begin(), points.end()) {
        if (points_.empty()) return;
        Vec3 lo = points_[0], hi = points_[0];
        for (const auto& p : points_) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        origin_ = lo;
        const double diag = (hi - lo).norm();
        if (cell <= 0) cell = diag > 0 ? 2.0 * diag / std::sqrt(static_cast<double>(points_.size())) : 1.0;
        cell_ = std::max(cell, 1e-9);
        max_shell_ = static_cast<int>(std::ceil(diag / cell_)) + 2;
        cells_.reserve(points_.size());
        for (std::size_t i = 0; i < points_.size(); ++i) cells_[key(points_[i])].push_back(static_cast<std::int32_t>(i));
    }

    std::size_t size() const { return points_.size(); }
    const Vec3& point(std::size_t i) const { return points_[i]; }

    struct Hit {
        std::int32_t index = -1;
        double dist2 = std::numeric_limits<double>::infinity();
    };

    Hit nearest(const Vec3& q) const {
        Hit best;
        if (points_.empty()) return best;
        auto consider = [&](std::int32_t i) {
            double d = (points_[i] - q).squaredNorm();
            if (d < best.dist2 || (d == best.dist2 && i < best.index)) best = {i, d};
        };
        if (far_query(q)) {
            for (std::size_t i = 0; i < points_.size(); ++i) consider(static_cast<std::int32_t>(i));
            return best;
        }
        const Coord3 c = key(q);
        for (int r = 0; r <= max_shell_ + shell_slack(q); ++r) {
            visit_shell(c, r, consider);
            const double bound = r * cell_;
            if (best.index >= 0 && best.dist2 <= bound * bound) break;
        }
        return best;
    }

    // k nearest, sorted by (distance, index).
    std::vector<Hit> knn(const Vec3& q, std::size_t k) const {
        std::vector<Hit> out;
        if (points_.empty() || k == 0) return out;
        auto worse = [](const Hit& a, const Hit& b) {
            return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
        };
        std::priority_queue<Hit, std::vector<Hit>, decltype(worse)> heap(worse);
        auto consider = [&](std::int32_t i) {
            Hit h{i, (points_[i] - q).squaredNorm()};
            if (heap.size() < k)
                heap.push(h);
            else if (worse(h, heap.top())) {
                heap.pop();
                heap.push(h);
            }
        };
        const int shells = far_query(q) ? -1 : max_shell_ + shell_slack(q);
        const Coord3 c = shells >= 0 ? key(q) : Coord3{};
        if (shells < 0)
            for (std::size_t i = 0; i < points_.size(); ++i) consider(static_cast<std::int32_t>(i));
        for (int r = 0; r <= shells; ++r) {
            visit_shell(c, r, consider);
            const double bound = r * cell_;
            if (heap.size() == std::min(k, points_.size()) && heap.top().dist2 <= bound * bound) break;
        }
        while (!heap.empty()) {
            out.push_back(heap.top());
            heap.pop();
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

    // All points within `radius` of q (unsorted).
    template <class Fn>
    void for_each_within(const Vec3& q, double radius, Fn&& fn) const {
        const int reach = static_cast<int>(std::ceil(radius / cell_));
        const Coord3 c = key(q);
        const double r2 = radius * radius;
        for (int dx = -reach; dx <= reach; ++dx)
            for (int dy = -reach; dy <= reach; ++dy)
                for (int dz = -reach; dz <= reach; ++dz) {
                    auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == cells_.end()) continue;
                    for (auto i : it->second) {
                        double d2 = (points_[i] - q).squaredNorm();
                        if (d2 <= r2) fn(i, d2);
                    }
                }
    }

private:
    Coord3 key(const Vec3& p) const {
        Vec3 g = (p - origin_) / cell_;
        return {static_cast<std::int32_t>(std::floor(g.x())), static_cast<std::int32_t>(std::floor(g.y())),
                static_cast<std::int32_t>(std::floor(g.z()))};
    }

    // Extra shells needed when the query lies outside the indexed bounding box.
    int shell_slack(const Vec3& q) const {
        Coord3 c = key(q);
        return std::max({std::abs(c.x), std::abs(c.y), std::abs(c.z)});
    }

    bool far_query(const Vec3& q) const {
        const double far = ((q - origin_) / cell_).cwiseAbs().maxCoeff();
        return !(far <= 4.0 * max_shell_ + 8);
    }

    template <class Fn>
    void visit_shell(Coord3 c, int r, Fn&& fn) const {
        auto cell = [&](int dx, int dy, int dz) {
            auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
            if (it != cells_.end())
                for (auto i : it->second) fn(i);
        };
        if (r == 0) {
            cell(0, 0, 0);
            return;
        }
        for (int dx = -r; dx <= r; ++dx)
            for (int dy = -r; dy <= r; ++dy) {
                if (std::abs(dx) == r || std::abs(dy) == r) {
                    for (int dz = -r; dz <= r; ++dz) cell(dx, dy, dz);
                } else {
                    cell(dx, dy, -r);
                    cell(dx, dy, r);
                }
            }
    }

    std::vector<Vec3> points_;
    Vec3 origin_ = Vec3::Zero();
    double cell_ = 1.0;
    int max_shell_ = 0;
    std::unordered_map<Coord3, std::vector<std::int32_t>, Coord3Hash> cells_;
};

}  // namespace pgpc
