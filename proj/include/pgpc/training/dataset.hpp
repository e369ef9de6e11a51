#pragma once

#include <nlohmann/json.hpp>
#include <random>
#include <vector>

#include "pgpc/prior/aligned.hpp"
#include "pgpc/prior/params.hpp"
#include "pgpc/prior/template_model.hpp"

namespace pgpc {

// One training pair: the voxelized subject and the voxelized prior built from its
// (quantized) parameters, both on the same 2^p lattice.
struct TrainSample {
    std::vector<Coord3> source;   // canonical
    std::vector<Coord3> aligned;  // canonical, may be empty
    PriorParams params;           // dequantized, as a decoder would see them
    int precision = 6;
};

struct ToyConfig {
    int count = 64;
    int precision = 6;
    double shape_sd = 1.0;
    double limb_sd = 0.35;     // shoulders, elbows, hips, knees
    double joint_sd = 0.08;    // every other joint
    double mismatch = 0.8;     // extra shape deviation of the subject the prior does not see
    double pose_mismatch = 0.1;  // per-joint pose deviation the prior does not see (radians)
    double offset_sd = 0.0;      // prior misregistration in voxels, as a fitter would leave it
    double density = 12.0;     // subject surface samples per voxel^2
    double fill = 0.9;         // fraction of the lattice the subject's longest side spans
    double sampling_ratio = 1.0;
    std::uint64_t seed = 1;

    static ToyConfig from_json(const nlohmann::json& j) {
        ToyConfig c;
        try {
            c.count = j.value("count", c.count);
            c.precision = j.value("precision", c.precision);
            c.shape_sd = j.value("shape_sd", c.shape_sd);
            c.limb_sd = j.value("limb_sd", c.limb_sd);
            c.joint_sd = j.value("joint_sd", c.joint_sd);
            c.mismatch = j.value("mismatch", c.mismatch);
            c.pose_mismatch = j.value("pose_mismatch", c.pose_mismatch);
            c.offset_sd = j.value("offset_sd", c.offset_sd);
            c.density = j.value("density", c.density);
            c.fill = j.value("fill", c.fill);
            c.sampling_ratio = j.value("sampling_ratio", c.sampling_ratio);
            c.seed = j.value("seed", c.seed);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad dataset config: ") + e.what());
        }
        if (c.count < 1) throw ConfigError("dataset needs at least one sample");
        if (c.precision < 3 || c.precision > 10) throw ConfigError("toy precision must be in [3, 10]");
        if (!(c.density > 0) || !(c.fill > 0) || c.fill > 1) throw ConfigError("density and fill must be positive, fill <= 1");
        if (!(c.sampling_ratio > 0)) throw ConfigError("sampling ratio must be positive");
        return c;
    }
};

namespace detail {

inline bool is_limb_joint(int j) {
    switch (j) {
        case 1: case 2: case 4: case 5: case 16: case 17: case 18: case 19: return true;
        default: return false;
    }
}

inline std::pair<Vec3, Vec3> mesh_bounds(const Mesh& m) {
    Vec3 lo = m.vertices[0], hi = m.vertices[0];
    for (const auto& v : m.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return {lo, hi};
}

}  // namespace detail

// Procedurally posed bodies. The prior uses the true pose and shape; the subject adds an
// unseen shape offset (`mismatch`), so the prior is close but not exact.
inline TrainSample make_toy_sample(const TemplateModel& t, const ToyConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    PriorParams p;
    for (int j = 1; j <= 23; ++j) {
        const double sd = detail::is_limb_joint(j) ? cfg.limb_sd : cfg.joint_sd;
        for (int k = 0; k < 3; ++k) p.pose[static_cast<std::size_t>(3 * (j - 1) + k)] = sd * normal01(rng);
    }
    for (auto& b : p.shape) b = std::clamp(cfg.shape_sd * normal01(rng), -2.5, 2.5);
    const double yaw = 2 * std::numbers::pi * uniform01(rng);
    p.rotation = {0.1 * normal01(rng), yaw, 0.1 * normal01(rng)};

    PriorParams subject = p;
    for (auto& b : subject.shape) b += cfg.mismatch * normal01(rng);
    for (auto& a : subject.pose) a += cfg.pose_mismatch * normal01(rng);

    // Fit the subject into the lattice: scale its longest side to `fill` of 2^p, centred.
    const double side = std::ldexp(1.0, cfg.precision);
    PriorParams unit = subject;
    unit.scale = 1.0;
    const auto [lo, hi] = detail::mesh_bounds(posed_mesh(t, unit));
    const double extent = (hi - lo).maxCoeff();
    const double s = cfg.fill * side / extent;
    const Vec3 centre = 0.5 * (lo + hi);
    const Vec3 jitter(uniform01(rng) - 0.5, uniform01(rng) - 0.5, uniform01(rng) - 0.5);
    const Vec3 delta = (Vec3::Constant(side / 2) + jitter) / s - centre;
    for (int k = 0; k < 3; ++k) p.translation[k] = subject.translation[k] = delta[k];
    p.scale = subject.scale = s;
    for (int k = 0; k < 3; ++k) p.translation[k] += cfg.offset_sd * normal01(rng) / s;

    TrainSample out;
    out.precision = cfg.precision;
    const Mesh body = aligned_mesh(t, subject);
    const auto n = static_cast<std::size_t>(std::ceil(cfg.density * body.total_area()));
    const auto pts = sample_surface_uniform(body, n, mix_seed(seed, 1));
    out.source = to_coords(voxelize(pts.cloud(), cfg.precision, lattice_box(cfg.precision)));
    out.params = dequantize_params(quantize_params(p));
    const auto count = static_cast<std::size_t>(std::ceil(cfg.sampling_ratio * static_cast<double>(out.source.size())));
    out.aligned = prior_voxels(t, out.params, count, cfg.precision, mix_seed(seed, 2));
    return out;
}

inline std::vector<TrainSample> make_toy_dataset(const TemplateModel& t, const ToyConfig& cfg) {
    std::vector<TrainSample> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) out.push_back(make_toy_sample(t, cfg, mix_seed(cfg.seed, 100 + i)));
    return out;
}

}  // namespace pgpc
