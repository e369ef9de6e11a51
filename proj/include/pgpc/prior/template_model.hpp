#pragma once

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pgpc/common.hpp"
#include "pgpc/geometry/point_cloud.hpp"

namespace pgpc {

// Kinematic tree of the standard 24-joint body skeleton.
inline const std::vector<std::int32_t>& body_parents() {
    static const std::vector<std::int32_t> p{-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
    return p;
}

// Linear body model. Arrays are row-major:
//   shape_basis[(v*3 + axis)*n_shape + k], pose_basis[(v*3 + axis)*n_pose + m],
//   regressor[j*V + v], weights[v*J + j].
struct TemplateModel {
    std::vector<Vec3> mean;
    std::vector<std::array<std::int32_t, 3>> faces;
    int n_shape = 0;
    int n_pose = 0;
    std::vector<double> shape_basis;
    std::vector<double> pose_basis;
    std::vector<double> regressor;
    std::vector<double> weights;
    std::vector<std::int32_t> parents;

    std::size_t vertex_count() const { return mean.size(); }
    std::size_t joint_count() const { return parents.size(); }

    double shape(std::size_t v, int axis, int k) const { return shape_basis[(v * 3 + axis) * n_shape + k]; }
    double pose(std::size_t v, int axis, int m) const { return pose_basis[(v * 3 + axis) * n_pose + m]; }
    double weight(std::size_t v, std::size_t j) const { return weights[v * joint_count() + j]; }

    Mesh rest_mesh() const { return Mesh{mean, faces}; }

    void validate() const {
        const std::size_t V = mean.size(), J = parents.size();
        if (V == 0) throw ConfigError("template has no vertices");
        if (J == 0 || J > 24) throw ConfigError("template joint count must be in [1, 24]");
        if (n_shape < 0 || n_shape > 10) throw ConfigError("template shape basis must have at most 10 components");
        if (n_pose != 0 && n_pose != static_cast<int>(9 * (J - 1)))
            throw ConfigError("template pose basis must have 0 or 9*(J-1) components");
        if (shape_basis.size() != V * 3 * n_shape) throw ConfigError("template shape basis has wrong size");
        if (pose_basis.size() != V * 3 * static_cast<std::size_t>(n_pose)) throw ConfigError("template pose basis has wrong size");
        if (regressor.size() != J * V) throw ConfigError("template joint regressor has wrong size");
        if (weights.size() != V * J) throw ConfigError("template skinning weights have wrong size");
        for (const auto& f : faces)
            for (auto i : f)
                if (i < 0 || static_cast<std::size_t>(i) >= V) throw ConfigError("template face references a missing vertex");
        for (std::size_t v = 0; v < V; ++v) {
            double sum = 0;
            for (std::size_t j = 0; j < J; ++j) {
                if (!(weight(v, j) >= 0)) throw ConfigError("template skinning weight is negative");
                sum += weight(v, j);
            }
            if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("template skinning weights of vertex " + std::to_string(v) + " do not sum to 1");
        }
        if (parents[0] != -1) throw ConfigError("template joint 0 must be the root");
        for (std::size_t j = 1; j < J; ++j)
            if (parents[j] < 0 || static_cast<std::size_t>(parents[j]) >= j)
                throw ConfigError("template parent of joint " + std::to_string(j) + " must precede it");
    }
};

// Binary layout: "PGT1", u32 counts (V, F, J, n_shape, n_pose), then float32 arrays:
// mean, faces, shape basis, pose basis, regressor, weights, parents. Indices are stored as
// exact float values.
inline std::vector<std::uint8_t> serialize_template(const TemplateModel& t) {
    t.validate();
    ByteWriter w;
    for (char c : std::string("PGT1")) w.u8(static_cast<std::uint8_t>(c));
    w.u32(static_cast<std::uint32_t>(t.mean.size()));
    w.u32(static_cast<std::uint32_t>(t.faces.size()));
    w.u32(static_cast<std::uint32_t>(t.parents.size()));
    w.u32(static_cast<std::uint32_t>(t.n_shape));
    w.u32(static_cast<std::uint32_t>(t.n_pose));
    for (const auto& v : t.mean)
        for (int k = 0; k < 3; ++k) w.f32(static_cast<float>(v[k]));
    for (const auto& f : t.faces)
        for (auto i : f) w.f32(static_cast<float>(i));
    for (double x : t.shape_basis) w.f32(static_cast<float>(x));
    for (double x : t.pose_basis) w.f32(static_cast<float>(x));
    for (double x : t.regressor) w.f32(static_cast<float>(x));
    for (double x : t.weights) w.f32(static_cast<float>(x));
    for (auto p : t.parents) w.f32(static_cast<float>(p));
    return w.take();
}

inline TemplateModel parse_template(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    auto magic = r.bytes(4);
    if (std::string(magic.begin(), magic.end()) != "PGT1") throw ParseError("not a template file (bad magic)", 0);
    const std::uint32_t V = r.u32(), F = r.u32(), J = r.u32(), ns = r.u32(), np = r.u32();
    if (J == 0 || J > 24 || ns > 10 || np > 9 * 23)
        throw ParseError("template header counts out of range", 4);
    const std::uint64_t floats = 3ull * V + 3ull * F + 3ull * V * ns + 3ull * V * np + 2ull * J * V + J;
    if (floats * 4 != r.remaining())
        throw ParseError("template payload size does not match header counts", r.position());
    TemplateModel t;
    t.n_shape = static_cast<int>(ns);
    t.n_pose = static_cast<int>(np);
    t.mean.resize(V);
    for (auto& v : t.mean)
        for (int k = 0; k < 3; ++k) v[k] = r.f32();
    auto index = [&]() {
        const std::size_t at = r.position();
        const float x = r.f32();
        if (x != std::floor(x) || std::abs(x) > 16777216.0f) throw ParseError("template index is not an integer", at);
        return static_cast<std::int32_t>(x);
    };
    t.faces.resize(F);
    for (auto& f : t.faces)
        for (auto& i : f) i = index();
    auto floats_of = [&](std::size_t n) {
        std::vector<double> out(n);
        for (auto& x : out) x = r.f32();
        return out;
    };
    t.shape_basis = floats_of(3ull * V * ns);
    t.pose_basis = floats_of(3ull * V * np);
    t.regressor = floats_of(1ull * J * V);
    t.weights = floats_of(1ull * V * J);
    t.parents.resize(J);
    for (auto& p : t.parents) p = index();
    // Float32 storage perturbs weight sums slightly; renormalise before validation.
    for (std::size_t v = 0; v < V; ++v) {
        double sum = 0;
        for (std::size_t j = 0; j < J; ++j) sum += t.weights[v * J + j];
        if (sum > 0)
            for (std::size_t j = 0; j < J; ++j) t.weights[v * J + j] /= sum;
    }
    t.validate();
    return t;
}

inline TemplateModel load_template(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open template file " + path, 0);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_template(buf);
}

inline void save_template(const std::string& path, const TemplateModel& t) {
    auto bytes = serialize_template(t);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write template file " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("short write to template file " + path);
}

namespace detail {

struct TubeBuilder {
    TemplateModel& t;
    std::vector<Vec3> axis_point;  // closest skeleton point, used for girth deformation
    std::vector<int> part;         // body-part label per vertex

    void vertex(const Vec3& p, const Vec3& axis, int label, std::initializer_list<std::pair<int, double>> w) {
        t.mean.push_back(p);
        axis_point.push_back(axis);
        part.push_back(label);
        const std::size_t J = t.parents.size();
        std::vector<double> row(J, 0.0);
        for (auto [j, x] : w) row[j] += x;
        t.weights.insert(t.weights.end(), row.begin(), row.end());
    }

    // Closed tube along a joint chain. Rings sit at each joint and halfway between
    // joints; caps close both ends.
    void chain(const std::vector<int>& joints, const std::vector<Vec3>& pos, const std::vector<double>& radius,
               int around, int label, double tip = 0.0) {
        struct Ring {
            Vec3 c, dir;
            double r;
            int a, b;
            double wa;
        };
        std::vector<Ring> rings;
        const int n = static_cast<int>(joints.size());
        for (int i = 0; i < n; ++i) {
            const int nxt = std::min(i + 1, n - 1), prv = std::max(i - 1, 0);
            Vec3 dir = (pos[joints[nxt]] - pos[joints[prv]]).normalized();
            const int prev_joint = i > 0 ? joints[i - 1] : joints[i];
            rings.push_back({pos[joints[i]], dir, radius[i], prev_joint, joints[i], i > 0 && i < n - 1 ? 0.5 : 0.0});
            if (i + 1 < n) {
                Vec3 d = pos[joints[i + 1]] - pos[joints[i]];
                rings.push_back({pos[joints[i]] + 0.5 * d, d.normalized(), 0.5 * (radius[i] + radius[i + 1]), joints[i],
                                 joints[i], 1.0});
            }
        }
        const auto base = static_cast<std::int32_t>(t.mean.size());
        for (const auto& ring : rings) {
            Vec3 ref = std::abs(ring.dir.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(0, 0, 1);
            Vec3 u = ring.dir.cross(ref).normalized(), v = ring.dir.cross(u);
            for (int k = 0; k < around; ++k) {
                const double a = 2 * std::numbers::pi * k / around;
                vertex(ring.c + ring.r * (std::cos(a) * u + std::sin(a) * v), ring.c, label,
                       {{ring.a, ring.wa}, {ring.b, 1.0 - ring.wa}});
            }
        }
        const auto R = static_cast<std::int32_t>(rings.size());
        for (std::int32_t i = 0; i + 1 < R; ++i)
            for (std::int32_t k = 0; k < around; ++k) {
                const std::int32_t k2 = (k + 1) % around;
                const std::int32_t a = base + i * around + k, b = base + i * around + k2;
                const std::int32_t c = base + (i + 1) * around + k, d = base + (i + 1) * around + k2;
                t.faces.push_back({a, c, b});
                t.faces.push_back({b, c, d});
            }
        const Vec3 start = rings.front().c - rings.front().dir * rings.front().r * 0.8;
        const Vec3 end = rings.back().c + rings.back().dir * (tip > 0 ? tip : rings.back().r * 0.8);
        const auto s = static_cast<std::int32_t>(t.mean.size());
        vertex(start, rings.front().c, label, {{joints.front(), 1.0}});
        vertex(end, rings.back().c, label, {{joints.back(), 1.0}});
        for (std::int32_t k = 0; k < around; ++k) {
            const std::int32_t k2 = (k + 1) % around;
            t.faces.push_back({s, base + k, base + k2});
            const std::int32_t last = base + (R - 1) * around;
            t.faces.push_back({s + 1, last + k2, last + k});
        }
    }

    void sphere(int joint, const Vec3& centre, double radius, int rings, int around, int label) {
        const auto base = static_cast<std::int32_t>(t.mean.size());
        for (int i = 1; i < rings; ++i) {
            const double phi = std::numbers::pi * i / rings;
            for (int k = 0; k < around; ++k) {
                const double a = 2 * std::numbers::pi * k / around;
                Vec3 p = centre + radius * Vec3(std::sin(phi) * std::cos(a), std::cos(phi), std::sin(phi) * std::sin(a));
                vertex(p, centre, label, {{joint, 1.0}});
            }
        }
        const auto top = static_cast<std::int32_t>(t.mean.size());
        vertex(centre + Vec3(0, radius, 0), centre, label, {{joint, 1.0}});
        vertex(centre - Vec3(0, radius, 0), centre, label, {{joint, 1.0}});
        for (int i = 0; i + 2 < rings; ++i)
            for (int k = 0; k < around; ++k) {
                const int k2 = (k + 1) % around;
                const std::int32_t a = base + i * around + k, b = base + i * around + k2;
                const std::int32_t c = base + (i + 1) * around + k, d = base + (i + 1) * around + k2;
                t.faces.push_back({a, b, c});
                t.faces.push_back({b, d, c});
            }
        const std::int32_t last = base + (rings - 2) * around;
        for (int k = 0; k < around; ++k) {
            const int k2 = (k + 1) % around;
            t.faces.push_back({top, base + k2, base + k});
            t.faces.push_back({top + 1, last + k, last + k2});
        }
    }
};

}  // namespace detail

// Procedural humanoid (T-pose, y up, metres) on the standard 24-joint skeleton: capsule
// tubes along the limbs and spine, a sphere for the head. Ten smooth shape components,
// empty pose basis.
inline TemplateModel make_toy_template() {
    TemplateModel t;
    t.parents = body_parents();
    const std::vector<Vec3> J{
        {0, 0.95, 0},      {0.09, 0.87, 0},    {-0.09, 0.87, 0},   {0, 1.05, 0},     {0.10, 0.50, 0},
        {-0.10, 0.50, 0},  {0, 1.18, 0},       {0.10, 0.09, 0},    {-0.10, 0.09, 0}, {0, 1.25, 0},
        {0.10, 0.03, 0.12}, {-0.10, 0.03, 0.12}, {0, 1.48, 0},     {0.08, 1.40, 0},  {-0.08, 1.40, 0},
        {0, 1.60, 0},      {0.18, 1.42, 0},    {-0.18, 1.42, 0},   {0.45, 1.42, 0},  {-0.45, 1.42, 0},
        {0.70, 1.42, 0},   {-0.70, 1.42, 0},   {0.78, 1.42, 0},    {-0.78, 1.42, 0}};
    detail::TubeBuilder b{t, {}, {}};
    enum Part { torso, head, leg_l, leg_r, foot_l, foot_r, arm_l, arm_r };
    b.chain({0, 3, 6, 9, 12}, J, {0.15, 0.14, 0.15, 0.16, 0.06}, 10, torso);
    b.sphere(15, J[15], 0.10, 6, 10, head);
    b.chain({1, 4, 7}, J, {0.08, 0.055, 0.045}, 8, leg_l);
    b.chain({2, 5, 8}, J, {0.08, 0.055, 0.045}, 8, leg_r);
    b.chain({7, 10}, J, {0.04, 0.035}, 6, foot_l, 0.04);
    b.chain({8, 11}, J, {0.04, 0.035}, 6, foot_r, 0.04);
    b.chain({13, 16, 18, 20, 22}, J, {0.05, 0.05, 0.04, 0.03, 0.035}, 8, arm_l, 0.06);
    b.chain({14, 17, 19, 21, 23}, J, {0.05, 0.05, 0.04, 0.03, 0.035}, 8, arm_r, 0.06);

    const std::size_t V = t.mean.size(), NJ = t.parents.size();
    // Each joint is regressed as the mean of the vertices carrying most of its weight
    // nearest to its rest position.
    t.regressor.assign(NJ * V, 0.0);
    for (std::size_t j = 0; j < NJ; ++j) {
        std::vector<std::pair<double, std::size_t>> near;
        for (std::size_t v = 0; v < V; ++v)
            if ((b.axis_point[v] - J[j]).norm() < 1e-9) near.push_back({0.0, v});
        if (near.empty()) {
            for (std::size_t v = 0; v < V; ++v) near.push_back({(t.mean[v] - J[j]).norm(), v});
            std::sort(near.begin(), near.end());
            near.resize(std::min<std::size_t>(6, near.size()));
        }
        for (auto [d, v] : near) t.regressor[j * V + v] = 1.0 / static_cast<double>(near.size());
    }

    // Shape components: stature, girth, arm length, leg length, shoulder width, belly,
    // head size, hip width, and two smooth random fields.
    t.n_shape = 10;
    t.shape_basis.assign(V * 3 * 10, 0.0);
    std::mt19937_64 rng(20240917);
    Vec3 fa[2], fb[2];
    for (int f = 0; f < 2; ++f) {
        fa[f] = Vec3(normal01(rng), normal01(rng), normal01(rng));
        fb[f] = Vec3(normal01(rng), normal01(rng), normal01(rng)) * 4.0;
    }
    for (std::size_t v = 0; v < V; ++v) {
        const Vec3& p = t.mean[v];
        const Vec3 radial = p - b.axis_point[v];
        const int part = b.part[v];
        std::array<Vec3, 10> d;
        d.fill(Vec3::Zero());
        d[0] = Vec3(0, 0.06 * p.y(), 0);
        d[1] = 0.2 * radial;
        if (part == arm_l || part == arm_r) d[2] = Vec3(0.08 * (p.x() - (p.x() > 0 ? 0.18 : -0.18)), 0, 0);
        if (part == leg_l || part == leg_r || part == foot_l || part == foot_r) d[3] = Vec3(0, 0.08 * (p.y() - 0.87), 0);
        if (part == arm_l || part == arm_r) d[4] = Vec3(p.x() > 0 ? 0.03 : -0.03, 0, 0);
        if (part == torso && radial.z() > 0) d[5] = Vec3(0, 0, 0.04 * radial.z() / 0.15) * std::exp(-std::pow((p.y() - 1.1) / 0.15, 2));
        if (part == head) d[6] = 0.15 * radial;
        if (part == leg_l || part == leg_r || part == foot_l || part == foot_r) d[7] = Vec3(p.x() > 0 ? 0.02 : -0.02, 0, 0);
        for (int f = 0; f < 2; ++f) d[8 + f] = 0.01 * fa[f] * std::sin(fb[f].dot(p));
        for (int k = 0; k < 10; ++k)
            for (int axis = 0; axis < 3; ++axis) t.shape_basis[(v * 3 + axis) * 10 + k] = d[k][axis];
    }
    t.validate();
    return t;
}

}  // namespace pgpc
