#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "pgpc/common.hpp"

namespace pgpc {

// Body-prior parameter set: 23 joint rotations (axis-angle), 10 shape coefficients, root
// rotation, root translation, gender, plus the model-to-voxel similarity scale.
struct PriorParams {
    static constexpr int kPose = 69;
    static constexpr int kShape = 10;
    static constexpr int kCoded = 86;  // everything except the scale

    std::array<double, kPose> pose{};
    std::array<double, kShape> shape{};
    std::array<double, 3> rotation{};
    std::array<double, 3> translation{};
    double gender = 0.0;
    double scale = 1.0;

    // Coded values in stream order: pose, shape, rotation, translation, gender.
    std::array<double, kCoded> flatten() const {
        std::array<double, kCoded> v{};
        std::size_t i = 0;
        for (double x : pose) v[i++] = x;
        for (double x : shape) v[i++] = x;
        for (double x : rotation) v[i++] = x;
        for (double x : translation) v[i++] = x;
        v[i] = gender;
        return v;
    }

    static PriorParams unflatten(const std::array<double, kCoded>& v, double scale) {
        PriorParams p;
        std::size_t i = 0;
        for (double& x : p.pose) x = v[i++];
        for (double& x : p.shape) x = v[i++];
        for (double& x : p.rotation) x = v[i++];
        for (double& x : p.translation) x = v[i++];
        p.gender = v[i];
        p.scale = scale;
        return p;
    }

    static std::string name(std::size_t i) {
        if (i < 69) return "alpha_" + std::to_string(i);
        if (i < 79) return "beta_" + std::to_string(i - 69);
        if (i < 82) return "theta_" + std::to_string(i - 79);
        if (i < 85) return "delta_" + std::to_string(i - 82);
        if (i == 85) return "gender";
        return "scale";
    }

    friend bool operator==(const PriorParams&, const PriorParams&) = default;
};

// Maps an axis-angle vector to the equivalent rotation with angle in [0, pi].
inline std::array<double, 3> canonical_axis_angle(std::array<double, 3> r) {
    const double a = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    if (!(a > std::numbers::pi)) return r;
    double b = std::fmod(a, 2 * std::numbers::pi);
    if (b > std::numbers::pi) b -= 2 * std::numbers::pi;
    const double f = b / a;
    return {r[0] * f, r[1] * f, r[2] * f};
}

inline PriorParams canonicalize(PriorParams p) {
    for (int j = 0; j < 23; ++j) {
        auto r = canonical_axis_angle({p.pose[3 * j], p.pose[3 * j + 1], p.pose[3 * j + 2]});
        for (int k = 0; k < 3; ++k) p.pose[3 * j + k] = r[k];
    }
    p.rotation = canonical_axis_angle(p.rotation);
    return p;
}

// 86 values at 1/1000 resolution plus the scale in unsigned 16.16 fixed point.
struct QuantizedParams {
    std::array<std::int16_t, PriorParams::kCoded> values{};
    std::uint32_t scale_fixed = 1u << 16;

    friend bool operator==(const QuantizedParams&, const QuantizedParams&) = default;

    static constexpr std::size_t kBytes = PriorParams::kCoded * 2 + 4;
};

inline QuantizedParams quantize_params(const PriorParams& params) {
    QuantizedParams q;
    const auto v = params.flatten();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) throw RangeError("parameter " + PriorParams::name(i) + " is not finite");
        const double scaled = std::round(v[i] * 1000.0);
        if (scaled < -32768.0 || scaled > 32767.0)
            throw RangeError("parameter " + PriorParams::name(i) + " = " + std::to_string(v[i]) +
                             " exceeds the +-32.767 coding range");
        q.values[i] = static_cast<std::int16_t>(scaled);
    }
    if (!std::isfinite(params.scale) || params.scale <= 0) throw RangeError("parameter scale must be positive");
    const double s = std::round(params.scale * 65536.0);
    if (s < 1.0 || s > 4294967295.0) throw RangeError("parameter scale exceeds the 16.16 coding range");
    q.scale_fixed = static_cast<std::uint32_t>(s);
    return q;
}

inline PriorParams dequantize_params(const QuantizedParams& q) {
    std::array<double, PriorParams::kCoded> v{};
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = q.values[i] / 1000.0;
    return PriorParams::unflatten(v, q.scale_fixed / 65536.0);
}

// Fixed 176-byte layout: 86 x int16 LE, then uint32 LE scale.
inline std::vector<std::uint8_t> encode_params(const QuantizedParams& q) {
    ByteWriter w;
    for (auto v : q.values) w.i16(v);
    w.u32(q.scale_fixed);
    return w.take();
}

inline QuantizedParams decode_params(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < QuantizedParams::kBytes)
        throw ParseError("parameter stream truncated: " + std::to_string(bytes.size()) + " of " +
                             std::to_string(QuantizedParams::kBytes) + " bytes",
                         bytes.size());
    if (bytes.size() > QuantizedParams::kBytes)
        throw ParseError("parameter stream has trailing bytes", QuantizedParams::kBytes);
    ByteReader r(bytes);
    QuantizedParams q;
    for (auto& v : q.values) v = r.i16();
    q.scale_fixed = r.u32();
    if (q.scale_fixed == 0) throw ParseError("parameter scale is zero", QuantizedParams::kBytes - 4);
    return q;
}

// Plain-text parameter file: one `name = value` per line, '#' starts a comment.
inline std::string format_params_text(const PriorParams& p) {
    std::ostringstream os;
    os.precision(17);
    const auto v = p.flatten();
    for (std::size_t i = 0; i < v.size(); ++i) os << PriorParams::name(i) << " = " << v[i] << "\n";
    os << "scale = " << p.scale << "\n";
    return os.str();
}

inline PriorParams parse_params_text(const std::string& text) {
    std::array<double, PriorParams::kCoded> v{};
    double scale = 1.0;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'name = value' on line " + std::to_string(line_no), line_no);
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
            return s;
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        double x = 0;
        try {
            std::size_t used = 0;
            x = std::stod(val, &used);
            if (used != val.size()) throw std::invalid_argument(val);
        } catch (const std::exception&) {
            throw ParseError("bad number '" + val + "' on line " + std::to_string(line_no), line_no);
        }
        if (key == "scale") {
            scale = x;
            continue;
        }
        bool found = false;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (PriorParams::name(i) == key) {
                v[i] = x;
                found = true;
                break;
            }
        if (!found) throw ParseError("unknown parameter '" + key + "' on line " + std::to_string(line_no), line_no);
    }
    return PriorParams::unflatten(v, scale);
}

inline PriorParams read_params_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open parameter file " + path, 0);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_params_text(ss.str());
}

}  // namespace pgpc
