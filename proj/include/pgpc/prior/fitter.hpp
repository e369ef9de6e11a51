#pragma once

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <random>

#include "pgpc/geometry/nn_grid.hpp"
#include "pgpc/geometry/poisson.hpp"
#include "pgpc/prior/body.hpp"

namespace pgpc {

struct FitConfig {
    int steps = 200;              // refinement budget (coordinate updates + alignment steps)
    double fd_step = 1e-2;        // finite-difference step, also the smallest search step
    std::size_t prior_samples = 1500;
    std::size_t max_target = 2000;
    std::uint64_t seed = 1;
};

struct FitResult {
    PriorParams params;
    double chamfer = 0;
    double initial_chamfer = 0;
    int steps_used = 0;
};

namespace detail {

class ChamferObjective {
public:
    ChamferObjective(const TemplateModel& t, const PointCloud& target, const FitConfig& cfg) : t_(t) {
        if (target.size() < 100) throw FitError("fitting needs at least 100 target points");
        target_ = target.points;
        bool spread = false;
        for (const auto& p : target_)
            if ((p - target_[0]).squaredNorm() > 0) {
                spread = true;
                break;
            }
        if (!spread) throw FitError("fitting target is degenerate: all points coincide");
        if (target_.size() > cfg.max_target) {
            std::mt19937_64 rng(mix_seed(cfg.seed, 1));
            std::shuffle(target_.begin(), target_.end(), rng);
            target_.resize(cfg.max_target);
        }
        grid_ = NeighborGrid(target_);
        samples_ = sample_surface_uniform(t.rest_mesh(), cfg.prior_samples, mix_seed(cfg.seed, 2));
    }

    const std::vector<Vec3>& target() const { return target_; }

    std::vector<Vec3> prior_points(const PriorParams& p) const {
        const Mesh m = aligned_mesh(t_, p);
        std::vector<Vec3> pts(samples_.points.size());
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto& f = m.faces[samples_.faces[i]];
            const Vec3& b = samples_.bary[i];
            pts[i] = b[0] * m.vertices[f[0]] + b[1] * m.vertices[f[1]] + b[2] * m.vertices[f[2]];
        }
        return pts;
    }

    // Mean nearest distance prior->target plus target->prior.
    double operator()(const PriorParams& p) const {
        if (!(p.scale > 0) || !std::isfinite(p.scale)) return std::numeric_limits<double>::infinity();
        const auto pts = prior_points(p);
        double a = 0, b = 0;
        for (const auto& q : pts) a += std::sqrt(grid_.nearest(q).dist2);
        NeighborGrid back(pts);
        for (const auto& q : target_) b += std::sqrt(back.nearest(q).dist2);
        const double c = a / pts.size() + b / target_.size();
        return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
    }

    // Nearest target point for each prior point.
    std::vector<Vec3> matches(const std::vector<Vec3>& pts) const {
        std::vector<Vec3> out(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) out[i] = target_[grid_.nearest(pts[i]).index];
        return out;
    }

    Vec3 root_joint(const PriorParams& p) const { return regress_joints(t_, shaped_vertices(t_, p))[0]; }

private:
    const TemplateModel& t_;
    std::vector<Vec3> target_;
    NeighborGrid grid_;
    SurfaceSamples samples_;
};

inline std::pair<Vec3, Mat3> moments(const std::vector<Vec3>& pts) {
    Vec3 c = Vec3::Zero();
    for (const auto& p : pts) c += p;
    c /= static_cast<double>(pts.size());
    Mat3 C = Mat3::Zero();
    for (const auto& p : pts) C += (p - c) * (p - c).transpose();
    return {c, C / static_cast<double>(pts.size())};
}

inline std::vector<Mat3> cube_rotations() {
    std::vector<Mat3> out;
    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (const auto& pm : perms)
        for (int s = 0; s < 8; ++s) {
            Mat3 R = Mat3::Zero();
            for (int r = 0; r < 3; ++r) R(r, pm[r]) = (s >> r & 1) ? -1.0 : 1.0;
            if (R.determinant() > 0) out.push_back(R);
        }
    return out;
}

// Similarity that places the prior (with root rotation R) onto the target's centroid and
// RMS radius.
inline PriorParams place(const ChamferObjective& obj, PriorParams p, const Mat3& R) {
    const Vec3 th = axis_angle_from_rotation(R);
    for (int k = 0; k < 3; ++k) p.rotation[k] = th[k];
    p.translation = {0, 0, 0};
    p.scale = 1.0;
    const auto pts = obj.prior_points(p);
    auto [cp, Cp] = moments(pts);
    auto [ct, Ct] = moments(obj.target());
    const double rp = std::sqrt(Cp.trace()), rt = std::sqrt(Ct.trace());
    p.scale = rp > 0 ? rt / rp : 1.0;
    const Vec3 d = ct / p.scale - cp;
    for (int k = 0; k < 3; ++k) p.translation[k] = d[k];
    return p;
}

// One closed-form similarity step from nearest-neighbour correspondences.
inline PriorParams similarity_step(const ChamferObjective& obj, const PriorParams& p) {
    const auto src = obj.prior_points(p);
    const auto dst = obj.matches(src);
    Eigen::Matrix3Xd X(3, src.size()), Y(3, dst.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        X.col(static_cast<Eigen::Index>(i)) = src[i];
        Y.col(static_cast<Eigen::Index>(i)) = dst[i];
    }
    const Eigen::Matrix4d T = Eigen::umeyama(X, Y, true);
    const Mat3 cR = T.topLeftCorner<3, 3>();
    const double c = std::cbrt(cR.determinant());
    if (!(c > 0)) return p;
    const Mat3 R = cR / c;
    const Vec3 t = T.topRightCorner<3, 1>();
    const Vec3 J0 = obj.root_joint(p);
    const Vec3 delta(p.translation[0], p.translation[1], p.translation[2]);
    const Mat3 R0 = rotation_from_axis_angle(joint_rotation(p, 0));
    PriorParams q = p;
    q.scale = c * p.scale;
    const Vec3 th = axis_angle_from_rotation(R * R0);
    const Vec3 d = R * (J0 + delta) + t / q.scale - J0;
    for (int k = 0; k < 3; ++k) {
        q.rotation[k] = th[k];
        q.translation[k] = d[k];
    }
    return q;
}

}  // namespace detail

// Fits body parameters to a cloud in voxel units: rotation candidates with centroid/RMS
// placement, then alternating similarity alignment and finite-difference coordinate
// descent over shape and pose. Deterministic for a given seed.
inline FitResult fit_params_detailed(const PointCloud& target, const TemplateModel& t, const FitConfig& cfg = {}) {
    t.validate();
    detail::ChamferObjective obj(t, target, cfg);

    std::vector<Mat3> candidates = detail::cube_rotations();
    {
        PriorParams rest;
        auto [cp, Cp] = detail::moments(obj.prior_points(rest));
        auto [ct, Ct] = detail::moments(obj.target());
        Eigen::SelfAdjointEigenSolver<Mat3> ep(Cp), et(Ct);
        for (int s = 0; s < 4; ++s) {
            Mat3 D = Mat3::Identity();
            D(0, 0) = (s & 1) ? -1 : 1;
            D(1, 1) = (s & 2) ? -1 : 1;
            Mat3 R = et.eigenvectors() * D * ep.eigenvectors().transpose();
            if (R.determinant() < 0) R = et.eigenvectors() * (D * Eigen::Vector3d(1, 1, -1).asDiagonal()) * ep.eigenvectors().transpose();
            candidates.push_back(R);
        }
    }
    FitResult res;
    res.chamfer = std::numeric_limits<double>::infinity();
    for (const auto& R : candidates) {
        PriorParams p = detail::place(obj, PriorParams{}, R);
        const double c = obj(p);
        if (c < res.chamfer) {
            res.chamfer = c;
            res.params = p;
        }
    }
    res.initial_chamfer = res.chamfer;

    // Coordinate layout for the descent: rotation, translation, log-scale, shape, pose.
    const int n_pose_coords = 3 * static_cast<int>(t.joint_count() - 1);
    const int n_coords = 7 + t.n_shape + n_pose_coords;
    auto get = [&](const PriorParams& p, int i) -> double {
        if (i < 3) return p.rotation[i];
        if (i < 6) return p.translation[i - 3];
        if (i == 6) return std::log(p.scale);
        if (i < 7 + t.n_shape) return p.shape[i - 7];
        return p.pose[i - 7 - t.n_shape];
    };
    auto set = [&](PriorParams& p, int i, double x) {
        if (i < 3) p.rotation[i] = x;
        else if (i < 6) p.translation[i - 3] = x;
        else if (i == 6) {
            // Rescale about the root joint so its voxel position stays put.
            const Vec3 J0 = obj.root_joint(p);
            const double s0 = p.scale, s1 = std::exp(x);
            for (int k = 0; k < 3; ++k) p.translation[k] = s0 / s1 * (J0[k] + p.translation[k]) - J0[k];
            p.scale = s1;
        }
        else if (i < 7 + t.n_shape) p.shape[i - 7] = x;
        else p.pose[i - 7 - t.n_shape] = x;
    };
    std::vector<double> step(n_coords);
    for (int i = 0; i < n_coords; ++i) step[i] = i < 3 ? 0.1 : i < 6 ? 0.05 : i == 6 ? 0.02 : i < 7 + t.n_shape ? 0.2 : 0.1;

    int used = 0;
    // One finite-difference descent attempt on coordinate i; true when it improved.
    auto descend = [&](int i) {
        const double x = get(res.params, i);
        PriorParams a = res.params, b = res.params;
        set(a, i, x + cfg.fd_step);
        set(b, i, x - cfg.fd_step);
        const double g = (obj(a) - obj(b)) / (2 * cfg.fd_step);
        ++used;
        if (g == 0 || !std::isfinite(g)) return false;
        PriorParams q = res.params;
        set(q, i, x - (g > 0 ? step[i] : -step[i]));
        const double c = obj(q);
        if (c < res.chamfer) {
            res.chamfer = c;
            res.params = q;
            step[i] *= 1.5;
            return true;
        }
        step[i] = std::max(step[i] * 0.5, cfg.fd_step);
        return false;
    };
    while (used < cfg.steps) {
        // (a) similarity: closed-form step, then polish rotation/translation/scale until a
        // full pass brings no improvement.
        PriorParams q = detail::similarity_step(obj, res.params);
        const double c = obj(q);
        ++used;
        if (c < res.chamfer) {
            res.chamfer = c;
            res.params = q;
        }
        for (bool active = true; active && used < cfg.steps;) {
            bool improved = false;
            for (int i = 0; i < 7 && used < cfg.steps; ++i) improved = descend(i) || improved;
            active = improved || std::any_of(step.begin(), step.begin() + 7, [&](double h) { return h > cfg.fd_step; });
        }
        // (b) shape, then pose.
        for (int i = 7; i < n_coords && used < cfg.steps; ++i) descend(i);
    }
    res.steps_used = used;
    res.params = canonicalize(res.params);
    return res;
}

inline PriorParams fit_params(const PointCloud& target, const TemplateModel& t, const FitConfig& cfg = {}) {
    return fit_params_detailed(target, t, cfg).params;
}

}  // namespace pgpc
