#pragma once

#include <Eigen/Geometry>

#include "pgpc/prior/params.hpp"
#include "pgpc/prior/template_model.hpp"

namespace pgpc {

using Mat3 = Eigen::Matrix3d;

inline Mat3 rotation_from_axis_angle(const Vec3& r) {
    const double a = r.norm();
    if (a < 1e-12) {
        Mat3 K;
        K << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
        return Mat3::Identity() + K;
    }
    return Eigen::AngleAxisd(a, r / a).toRotationMatrix();
}

inline Vec3 axis_angle_from_rotation(const Mat3& R) {
    Eigen::AngleAxisd aa(R);
    return aa.axis() * aa.angle();
}

inline Vec3 joint_rotation(const PriorParams& p, std::size_t j) {
    if (j == 0) return Vec3(p.rotation[0], p.rotation[1], p.rotation[2]);
    return Vec3(p.pose[3 * (j - 1)], p.pose[3 * (j - 1) + 1], p.pose[3 * (j - 1) + 2]);
}

inline void check_dimensions(const TemplateModel& t) {
    if (t.joint_count() == 0 || t.joint_count() > 24) throw ConfigError("template joint count must be in [1, 24]");
    if (t.n_shape > PriorParams::kShape) throw ConfigError("template has more shape components than parameters");
    if (t.n_pose != 0 && t.n_pose != static_cast<int>(9 * (t.joint_count() - 1)))
        throw ConfigError("template pose basis does not match its joint count");
    const std::size_t V = t.vertex_count();
    if (t.shape_basis.size() != V * 3 * t.n_shape || t.pose_basis.size() != V * 3 * static_cast<std::size_t>(t.n_pose) ||
        t.regressor.size() != t.joint_count() * V || t.weights.size() != V * t.joint_count())
        throw ConfigError("template array sizes do not match its counts");
}

// Template plus shape-only deviation.
inline std::vector<Vec3> shaped_vertices(const TemplateModel& t, const PriorParams& p) {
    check_dimensions(t);
    std::vector<Vec3> out = t.mean;
    for (std::size_t v = 0; v < out.size(); ++v)
        for (int axis = 0; axis < 3; ++axis) {
            double d = 0;
            for (int k = 0; k < t.n_shape; ++k) d += p.shape[k] * t.shape(v, axis, k);
            out[v][axis] += d;
        }
    return out;
}

// Rotation-matrix deviations (R - I) of the non-root joints, row-major per joint.
inline std::vector<double> pose_features(const TemplateModel& t, const PriorParams& p) {
    std::vector<double> f;
    f.reserve(9 * (t.joint_count() - 1));
    for (std::size_t j = 1; j < t.joint_count(); ++j) {
        Mat3 D = rotation_from_axis_angle(joint_rotation(p, j)) - Mat3::Identity();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) f.push_back(D(r, c));
    }
    return f;
}

// Template with shape and pose-corrective deviations applied.
inline std::vector<Vec3> apply_blendshapes(const TemplateModel& t, const PriorParams& p) {
    std::vector<Vec3> out = shaped_vertices(t, p);
    if (t.n_pose == 0) return out;
    const auto f = pose_features(t, p);
    for (std::size_t v = 0; v < out.size(); ++v)
        for (int axis = 0; axis < 3; ++axis) {
            double d = 0;
            for (int m = 0; m < t.n_pose; ++m) d += f[m] * t.pose(v, axis, m);
            out[v][axis] += d;
        }
    return out;
}

inline std::vector<Vec3> regress_joints(const TemplateModel& t, const std::vector<Vec3>& verts) {
    const std::size_t V = t.vertex_count();
    std::vector<Vec3> J(t.joint_count(), Vec3::Zero());
    for (std::size_t j = 0; j < J.size(); ++j)
        for (std::size_t v = 0; v < V; ++v) {
            const double w = t.regressor[j * V + v];
            if (w != 0) J[j] += w * verts[v];
        }
    return J;
}

// Per-joint skinning transform in displacement form: a vertex v bound to joint j moves by
// (R_j - I)(v - J_j) + d_j, where R_j is the composed world rotation and d_j the joint's own
// displacement. Equal to R_j (v - J_j) + posed J_j, but identity rotations give exactly zero.
struct JointMotion {
    Mat3 rotation_minus_identity = Mat3::Zero();
    Vec3 displacement = Vec3::Zero();
};

inline std::vector<JointMotion> joint_motions(const TemplateModel& t, const std::vector<Vec3>& rest_joints,
                                              const PriorParams& p) {
    const std::size_t NJ = t.joint_count();
    std::vector<Mat3> world(NJ);
    std::vector<JointMotion> out(NJ);
    for (std::size_t j = 0; j < NJ; ++j) {
        const Mat3 local = rotation_from_axis_angle(joint_rotation(p, j));
        const auto parent = t.parents[j];
        if (parent < 0) {
            world[j] = local;
        } else {
            const auto q = static_cast<std::size_t>(parent);
            world[j] = world[q] * local;
            out[j].displacement =
                out[q].displacement + out[q].rotation_minus_identity * (rest_joints[j] - rest_joints[q]);
        }
        out[j].rotation_minus_identity = world[j] - Mat3::Identity();
    }
    return out;
}

// Linear blend skinning of blended vertices, then the root translation.
inline Mesh skin(const TemplateModel& t, const std::vector<Vec3>& verts, const PriorParams& p) {
    check_dimensions(t);
    if (verts.size() != t.vertex_count()) throw ConfigError("vertex count does not match the template");
    const auto rest_joints = regress_joints(t, shaped_vertices(t, p));
    const auto motion = joint_motions(t, rest_joints, p);
    const Vec3 delta(p.translation[0], p.translation[1], p.translation[2]);
    Mesh out;
    out.faces = t.faces;
    out.vertices.resize(verts.size());
    const std::size_t NJ = t.joint_count();
    for (std::size_t v = 0; v < verts.size(); ++v) {
        Vec3 move = Vec3::Zero();
        for (std::size_t j = 0; j < NJ; ++j) {
            const double w = t.weight(v, j);
            if (w != 0)
                move += w * (motion[j].rotation_minus_identity * (verts[v] - rest_joints[j]) + motion[j].displacement);
        }
        out.vertices[v] = verts[v] + move + delta;
    }
    return out;
}

// Posed body in model units.
inline Mesh posed_mesh(const TemplateModel& t, const PriorParams& p) { return skin(t, apply_blendshapes(t, p), p); }

// Posed body in voxel units (scaled by s).
inline Mesh aligned_mesh(const TemplateModel& t, const PriorParams& p) {
    Mesh m = posed_mesh(t, p);
    for (auto& v : m.vertices) v *= p.scale;
    return m;
}

}  // namespace pgpc
