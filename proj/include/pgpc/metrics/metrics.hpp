#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "pgpc/geometry/nn_grid.hpp"
#include "pgpc/geometry/point_cloud.hpp"

namespace pgpc {

inline constexpr double kPsnrCap = 999.0;

namespace detail {

inline void require_points(const PointCloud& c, const char* what) {
    if (c.empty()) throw DegenerateInputError(std::string(what) + " cloud is empty");
}

// Per-point terms summed in index order (deterministic for any worker count).
template <class Fn>
double mean_of(std::size_t n, Fn&& term) {
    std::vector<double> v(n);
    parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) v[i] = term(i);
    }, 512);
    double sum = 0, comp = 0;  // Kahan
    for (double x : v) {
        const double y = x - comp, t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    return sum / static_cast<double>(n);
}

}  // namespace detail

// Mean squared distance from each test point to its nearest reference point.
inline double d1_mse(const PointCloud& test, const PointCloud& reference) {
    detail::require_points(test, "test");
    detail::require_points(reference, "reference");
    const NeighborGrid grid(reference.points);
    return detail::mean_of(test.size(), [&](std::size_t i) { return grid.nearest(test.points[i]).dist2; });
}

// 10 log10(3 (2^p - 1)^2 / mse); zero error maps to the cap.
inline double psnr(double mse, int precision) {
    if (mse < 0 || !std::isfinite(mse)) throw EvalError("mse must be finite and nonnegative");
    if (mse == 0) return kPsnrCap;
    const double peak = std::ldexp(1.0, precision) - 1;
    return std::min(kPsnrCap, 10 * std::log10(3 * peak * peak / mse));
}

using NormalField = std::vector<Vec3>;

namespace detail {

// Unit vector orthogonal to d, chosen deterministically.
inline Vec3 any_orthogonal(const Vec3& d) {
    int axis = 0;
    for (int k = 1; k < 3; ++k)
        if (std::abs(d[k]) < std::abs(d[axis])) axis = k;
    return d.cross(Vec3::Unit(axis)).normalized();
}

inline Vec3 fix_sign(Vec3 n) {
    for (int k = 0; k < 3; ++k) {
        if (std::abs(n[k]) > 1e-12) {
            if (n[k] < 0) n = -n;
            break;
        }
    }
    return n;
}

}  // namespace detail

// Smallest-eigenvector normals of each point's k-neighbourhood (the point included).
inline NormalField estimate_normals(const PointCloud& cloud, std::size_t k = 12) {
    if (k < 3) throw RangeError("normal estimation needs k >= 3");
    if (cloud.size() < k)
        throw DegenerateInputError("normal estimation needs at least k = " + std::to_string(k) + " points, cloud has " +
                                   std::to_string(cloud.size()));
    const NeighborGrid grid(cloud.points);
    NormalField normals(cloud.size());
    parallel_for(cloud.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto nb = grid.knn(cloud.points[i], k);
            Vec3 c = Vec3::Zero();
            for (const auto& h : nb) c += cloud.points[static_cast<std::size_t>(h.index)];
            c /= static_cast<double>(nb.size());
            Eigen::Matrix3d C = Eigen::Matrix3d::Zero();
            for (const auto& h : nb) {
                const Vec3 d = cloud.points[static_cast<std::size_t>(h.index)] - c;
                C += d * d.transpose();
            }
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(C);
            const auto& ev = es.eigenvalues();
            Vec3 n;
            if (ev[2] <= 0) n = Vec3::UnitZ();  // all neighbours coincide
            else if (ev[1] <= 1e-12 * ev[2]) n = detail::any_orthogonal(es.eigenvectors().col(2));
            else n = es.eigenvectors().col(0).normalized();
            normals[i] = detail::fix_sign(n);
        }
    }, 256);
    return normals;
}

// Mean squared projection of the nearest-neighbour error onto the reference normal.
inline double d2_mse(const PointCloud& test, const PointCloud& reference, const NormalField& normals) {
    detail::require_points(test, "test");
    detail::require_points(reference, "reference");
    if (normals.size() != reference.size()) throw ContractError("normals must belong to the reference cloud");
    const NeighborGrid grid(reference.points);
    return detail::mean_of(test.size(), [&](std::size_t i) {
        const auto h = grid.nearest(test.points[i]);
        const auto j = static_cast<std::size_t>(h.index);
        const double d = (test.points[i] - reference.points[j]).dot(normals[j]);
        return d * d;
    });
}

enum class DistortionMetric { d1, d2 };
enum class SymmetricMode { max_error, max_psnr };

inline SymmetricMode parse_symmetric_mode(const std::string& s) {
    if (s == "max-error") return SymmetricMode::max_error;
    if (s == "max-psnr") return SymmetricMode::max_psnr;
    throw ConfigError("symmetric mode must be max-error or max-psnr, got '" + s + "'");
}

// Both directions; max-error reports the PSNR of the larger MSE, max-psnr the larger PSNR.
inline double symmetric_psnr(const PointCloud& a, const PointCloud& b, int precision, DistortionMetric metric,
                             SymmetricMode mode = SymmetricMode::max_error, std::size_t normal_k = 12) {
    auto one = [&](const PointCloud& test, const PointCloud& ref) {
        if (metric == DistortionMetric::d1) return d1_mse(test, ref);
        return d2_mse(test, ref, estimate_normals(ref, std::min(normal_k, ref.size())));
    };
    const double ab = one(a, b), ba = one(b, a);
    return mode == SymmetricMode::max_error ? psnr(std::max(ab, ba), precision)
                                            : std::max(psnr(ab, precision), psnr(ba, precision));
}

struct RDPoint {
    double rate = 0;  // bits per point
    double psnr = 0;  // dB
};

namespace detail {

// Least-squares cubic y(x); coefficients low order first.
inline Eigen::Vector4d cubic_fit(const std::vector<double>& x, const std::vector<double>& y) {
    Eigen::MatrixXd A(static_cast<Eigen::Index>(x.size()), 4);
    Eigen::VectorXd b(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (int k = 0; k < 4; ++k) A(r, k) = std::pow(x[i], k);
        b(r) = y[i];
    }
    return A.colPivHouseholderQr().solve(b);
}

inline double cubic_integral(const Eigen::Vector4d& c, double lo, double hi) {
    auto F = [&](double x) { return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 + c[3] * x * x * x * x / 4; };
    return F(hi) - F(lo);
}

// Mean of (fit_b - fit_a) over the overlap of the two x ranges.
inline double mean_fit_difference(const std::vector<double>& xa, const std::vector<double>& ya,
                                  const std::vector<double>& xb, const std::vector<double>& yb) {
    const double lo = std::max(*std::min_element(xa.begin(), xa.end()), *std::min_element(xb.begin(), xb.end()));
    const double hi = std::min(*std::max_element(xa.begin(), xa.end()), *std::max_element(xb.begin(), xb.end()));
    if (!(hi > lo)) throw EvalError("RD curves do not overlap");
    const auto ca = cubic_fit(xa, ya), cb = cubic_fit(xb, yb);
    return (cubic_integral(cb, lo, hi) - cubic_integral(ca, lo, hi)) / (hi - lo);
}

inline void check_curve(const std::vector<RDPoint>& c) {
    if (c.size() < 4) throw EvalError("BD metrics need at least 4 RD points per curve");
    for (const auto& p : c)
        if (!(p.rate > 0) || !std::isfinite(p.psnr)) throw EvalError("RD points need positive rate and finite PSNR");
}

}  // namespace detail

// Average rate change of B relative to A at equal quality, in percent.
inline double bd_rate(const std::vector<RDPoint>& a, const std::vector<RDPoint>& b) {
    detail::check_curve(a);
    detail::check_curve(b);
    std::vector<double> pa, ra, pb, rb;
    for (const auto& p : a) {
        pa.push_back(p.psnr);
        ra.push_back(std::log10(p.rate));
    }
    for (const auto& p : b) {
        pb.push_back(p.psnr);
        rb.push_back(std::log10(p.rate));
    }
    return (std::pow(10.0, detail::mean_fit_difference(pa, ra, pb, rb)) - 1) * 100;
}

// Average PSNR change of B relative to A at equal rate, in dB.
inline double bd_psnr(const std::vector<RDPoint>& a, const std::vector<RDPoint>& b) {
    detail::check_curve(a);
    detail::check_curve(b);
    std::vector<double> pa, ra, pb, rb;
    for (const auto& p : a) {
        pa.push_back(p.psnr);
        ra.push_back(std::log10(p.rate));
    }
    for (const auto& p : b) {
        pb.push_back(p.psnr);
        rb.push_back(std::log10(p.rate));
    }
    return detail::mean_fit_difference(ra, pa, rb, pb);
}

// RD rows as `sequence, lambda, bpp, d1_psnr, d2_psnr`; the header is written when the
// file is new or empty.
struct RDRow {
    std::string sequence;
    double lambda = 0, bpp = 0, d1_psnr = 0, d2_psnr = 0;
};

inline std::string format_rd_row(const RDRow& r) {
    std::ostringstream os;
    os << r.sequence << ", " << r.lambda << ", " << std::setprecision(10) << r.bpp << ", " << r.d1_psnr << ", "
       << r.d2_psnr;
    return os.str();
}

inline void append_rd_csv(const std::filesystem::path& path, const RDRow& r) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw ConfigError("cannot open " + path.string() + " for appending");
    if (fresh) out << "sequence, lambda, bpp, d1_psnr, d2_psnr\n";
    out << format_rd_row(r) << '\n';
    if (!out) throw ConfigError("write failed for " + path.string());
}

}  // namespace pgpc
