#pragma once

#include "pgpc/geometry/poisson.hpp"
#include "pgpc/geometry/voxelize.hpp"
#include "pgpc/prior/body.hpp"

namespace pgpc {

// Decoder-side prior cloud: skin the template, Poisson-sample `count` points and voxelize
// them on the precision-p lattice (points outside it are dropped). Encoder and decoder
// call this with the same dequantized parameters and seed, so the result is identical.
inline std::vector<Coord3> prior_voxels(const TemplateModel& t, const PriorParams& p, std::size_t count,
                                        int precision, std::uint64_t seed) {
    if (count == 0) return {};
    const Mesh m = aligned_mesh(t, p);
    PoissonConfig cfg;
    cfg.seed = seed;
    const auto s = sample_surface_poisson(m, count, cfg);
    return to_coords(voxelize(s.cloud(), precision, lattice_box(precision)));
}

}  // namespace pgpc
