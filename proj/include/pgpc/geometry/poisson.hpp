#pragma once

#include <cmath>
#include <queue>
#include <random>
#include <vector>

#include "pgpc/geometry/nn_grid.hpp"
#include "pgpc/geometry/point_cloud.hpp"

namespace pgpc {

struct PoissonConfig {
    std::uint64_t seed = 1;
    double candidate_factor = 4.0;  // candidates drawn per requested sample
    double alpha = 8.0;             // weight exponent
    double beta = 0.65;             // weight limiting strength
    double gamma = 1.5;             // weight limiting falloff
};

// Samples with the triangle they lie on and their barycentric coordinates.
struct SurfaceSamples {
    std::vector<Vec3> points;
    std::vector<std::int32_t> faces;
    std::vector<Vec3> bary;

    PointCloud cloud() const { return PointCloud{points, std::nullopt}; }
};

// Area-weighted uniform candidates on the mesh surface.
inline SurfaceSamples sample_surface_uniform(const Mesh& mesh, std::size_t count, std::uint64_t seed) {
    mesh.validate();
    std::vector<double> cum(mesh.faces.size());
    double total = 0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        total += mesh.face_area(f);
        cum[f] = total;
    }
    if (!(total > 0)) throw DegenerateInputError("mesh has zero surface area");
    std::mt19937_64 rng(seed);
    SurfaceSamples s;
    s.points.reserve(count);
    s.faces.reserve(count);
    s.bary.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = uniform01(rng) * total;
        std::size_t f = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
        f = std::min(f, cum.size() - 1);
        while (f > 0 && mesh.face_area(f) == 0) --f;
        const double r1 = std::sqrt(uniform01(rng)), r2 = uniform01(rng);
        Vec3 b(1 - r1, r1 * (1 - r2), r1 * r2);
        const auto& t = mesh.faces[f];
        s.points.push_back(b[0] * mesh.vertices[t[0]] + b[1] * mesh.vertices[t[1]] + b[2] * mesh.vertices[t[2]]);
        s.faces.push_back(static_cast<std::int32_t>(f));
        s.bary.push_back(b);
    }
    return s;
}

// Largest disk radius for `count` samples tiling a surface of the given area.
inline double max_poisson_radius(double area, std::size_t count) {
    return std::sqrt(area / (2.0 * std::sqrt(3.0) * static_cast<double>(count)));
}

// Poisson-disk sampling by weighted sample elimination: draw a candidate pool, then
// repeatedly drop the candidate with the largest crowding weight
// w = sum (1 - d / 2r)^alpha over neighbours closer than 2r, until `count` remain.
inline SurfaceSamples sample_surface_poisson(const Mesh& mesh, std::size_t count, const PoissonConfig& cfg = {}) {
    if (count == 0) throw RangeError("sample count must be at least 1");
    const double area = mesh.total_area();
    if (!(area > 0)) throw DegenerateInputError("mesh has zero surface area");
    std::size_t pool = static_cast<std::size_t>(std::ceil(cfg.candidate_factor * static_cast<double>(count)));
    pool = std::max(pool, count);
    SurfaceSamples cand = sample_surface_uniform(mesh, pool, cfg.seed);
    if (pool == count) return cand;

    const double d_max = 2.0 * max_poisson_radius(area, count);
    const double ratio = static_cast<double>(count) / static_cast<double>(pool);
    const double d_min = d_max * (1.0 - std::pow(ratio, cfg.gamma)) * cfg.beta;
    auto weight = [&](double d) {
        d = std::max(d, d_min);
        return std::pow(1.0 - d / d_max, cfg.alpha);
    };

    NeighborGrid grid(cand.points, d_max);
    std::vector<std::int32_t> nbr_ptr{0}, nbr;
    std::vector<double> nbr_w;
    std::vector<double> w(pool, 0.0);
    for (std::size_t i = 0; i < pool; ++i) {
        std::vector<std::pair<std::int32_t, double>> local;
        grid.for_each_within(cand.points[i], d_max, [&](std::int32_t j, double d2) {
            if (static_cast<std::size_t>(j) != i) local.push_back({j, std::sqrt(d2)});
        });
        std::sort(local.begin(), local.end());
        for (auto [j, d] : local) {
            if (d >= d_max) continue;
            double wij = weight(d);
            nbr.push_back(j);
            nbr_w.push_back(wij);
            w[i] += wij;
        }
        nbr_ptr.push_back(static_cast<std::int32_t>(nbr.size()));
    }

    struct Entry {
        double w;
        std::int32_t i;
        bool operator<(const Entry& o) const { return w < o.w || (w == o.w && i > o.i); }
    };
    std::priority_queue<Entry> heap;
    for (std::size_t i = 0; i < pool; ++i) heap.push({w[i], static_cast<std::int32_t>(i)});
    std::vector<char> alive(pool, 1);
    std::size_t remaining = pool;
    while (remaining > count && !heap.empty()) {
        Entry e = heap.top();
        heap.pop();
        if (!alive[e.i] || e.w != w[e.i]) continue;
        alive[e.i] = 0;
        --remaining;
        for (std::int32_t p = nbr_ptr[e.i]; p < nbr_ptr[e.i + 1]; ++p) {
            const std::int32_t j = nbr[p];
            if (!alive[j]) continue;
            w[j] -= nbr_w[p];
            heap.push({w[j], j});
        }
    }

    SurfaceSamples out;
    out.points.reserve(count);
    for (std::size_t i = 0; i < pool; ++i) {
        if (!alive[i]) continue;
        out.points.push_back(cand.points[i]);
        out.faces.push_back(cand.faces[i]);
        out.bary.push_back(cand.bary[i]);
    }
    return out;
}

}  // namespace pgpc
