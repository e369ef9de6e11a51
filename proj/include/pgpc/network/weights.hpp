#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <vector>

#include "pgpc/entropy/factorized.hpp"
#include "pgpc/sparse/ops.hpp"

namespace pgpc {

struct NetworkConfig {
    int scales = 3;
    std::vector<int> widths{16, 32, 64};
    int latent_channels = 8;
    bool vrn = true;  // false drops the VRN units (ablation)

    int width(int scale) const { return widths.at(static_cast<std::size_t>(scale - 1)); }
    // Channels of the extractor output at `scale` (the last scale carries the latent).
    int out_channels(int scale) const { return scale == scales ? latent_channels : width(scale); }

    void validate() const {
        if (scales < 1) throw ConfigError("network needs at least one scale");
        if (widths.size() != static_cast<std::size_t>(scales))
            throw ConfigError("network needs one width per scale, got " + std::to_string(widths.size()));
        for (int w : widths)
            if (w <= 0 || (vrn && w % 2)) throw ConfigError("network widths must be positive and even");
        if (latent_channels <= 0) throw ConfigError("latent channel count must be positive");
    }

    nlohmann::json to_json() const {
        return {{"scales", scales}, {"widths", widths}, {"latent_channels", latent_channels}, {"vrn", vrn}};
    }
    static NetworkConfig from_json(const nlohmann::json& j) {
        NetworkConfig c;
        try {
            c.scales = j.value("scales", c.scales);
            c.widths = j.value("widths", c.widths);
            c.latent_channels = j.value("latent_channels", c.latent_channels);
            c.vrn = j.value("vrn", c.vrn);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad network config: ") + e.what());
        }
        c.validate();
        return c;
    }
    bool operator==(const NetworkConfig&) const = default;
};

// Named kernels of all three sub-networks, kept in creation order (the manifest order).
template <class T>
struct NetworkWeights {
    NetworkConfig config;
    std::vector<std::string> names;
    std::vector<ConvKernel<T>> layers;

    ConvKernel<T>& layer(const std::string& name) { return layers[index(name)]; }
    const ConvKernel<T>& layer(const std::string& name) const { return layers[index(name)]; }
    bool has(const std::string& name) const { return std::find(names.begin(), names.end(), name) != names.end(); }

    std::size_t index(const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ConfigError("weights have no layer '" + name + "'");
        return static_cast<std::size_t>(it - names.begin());
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& k : layers) n += k.weights.size() + k.bias.size();
        return n;
    }

    // Same layout, all values zero (gradient accumulator).
    NetworkWeights zeros_like() const {
        NetworkWeights z = *this;
        for (auto& k : z.layers) {
            std::fill(k.weights.begin(), k.weights.end(), T(0));
            std::fill(k.bias.begin(), k.bias.end(), T(0));
        }
        return z;
    }

    void validate() const {
        config.validate();
        if (names.size() != layers.size()) throw ConfigError("weights manifest is inconsistent");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].validate();
            for (T v : layers[i].weights)
                if (!std::isfinite(static_cast<double>(v))) throw ConfigError("non-finite weight in " + names[i]);
            for (T v : layers[i].bias)
                if (!std::isfinite(static_cast<double>(v))) throw ConfigError("non-finite bias in " + names[i]);
        }
    }

    template <class U>
    NetworkWeights<U> cast() const {
        NetworkWeights<U> w;
        w.config = config;
        w.names = names;
        for (const auto& k : layers) w.layers.push_back(k.template cast<U>());
        return w;
    }
};

namespace detail {

template <class T>
void add_layer(NetworkWeights<T>& w, std::string name, std::vector<Coord3> offsets, int in, int out, int stride,
               bool bias) {
    w.names.push_back(std::move(name));
    w.layers.emplace_back(std::move(offsets), in, out, stride, bias);
}

template <class T>
void add_vrn(NetworkWeights<T>& w, const std::string& prefix, int c) {
    const int h = c / 2;
    const auto k3 = cube_offsets(-1, 1), k1 = cube_offsets(0, 0);
    add_layer(w, prefix + ".a1", k3, c, h, 1, true);
    add_layer(w, prefix + ".a2", k3, h, h, 1, true);
    add_layer(w, prefix + ".b1", k1, c, h, 1, true);
    add_layer(w, prefix + ".b2", k3, h, h, 1, true);
    add_layer(w, prefix + ".b3", k1, h, h, 1, true);
}

}  // namespace detail

inline std::string layer_name(const char* part, int scale, const char* what) {
    return std::string(part) + "." + std::to_string(scale) + "." + what;
}

// Allocates every layer for `cfg` with zero values.
template <class T>
NetworkWeights<T> make_weights(const NetworkConfig& cfg) {
    cfg.validate();
    NetworkWeights<T> w;
    w.config = cfg;
    const auto k3 = cube_offsets(-1, 1), k2 = cube_offsets(0, 1);
    const int L = cfg.scales;
    for (int l = 1; l <= L; ++l) {
        const int in = l == 1 ? 1 : cfg.width(l - 1), c = cfg.width(l);
        detail::add_layer(w, layer_name("extract", l, "down"), k2, in, c, 2, true);
        if (cfg.vrn) detail::add_vrn(w, layer_name("extract", l, "vrn"), c);
        detail::add_layer(w, layer_name("extract", l, "out"), k3, c, cfg.out_channels(l), 1, true);
    }
    int running = cfg.out_channels(1);
    for (int l = 2; l <= L; ++l) {
        detail::add_layer(w, layer_name("warp", l, "down"), k2, running, cfg.width(l), 2, true);
        running = cfg.out_channels(l) + cfg.width(l);
    }
    // No bias: an empty receptive field must give zero features.
    detail::add_layer(w, "warp.final", k3, running, cfg.latent_channels, 1, false);
    for (int s = L - 1; s >= 0; --s) {
        const int in = s == L - 1 ? cfg.latent_channels : cfg.width(s + 2), c = cfg.width(s + 1);
        detail::add_layer(w, layer_name("propagate", s, "up"), k3, in, c, 2, true);
        if (cfg.vrn) detail::add_vrn(w, layer_name("propagate", s, "vrn"), c);
        detail::add_layer(w, layer_name("propagate", s, "logit"), k3, c, 1, 1, true);
    }
    return w;
}

// He-normal initialisation; biases zero.
template <class T>
NetworkWeights<T> init_weights(const NetworkConfig& cfg, std::uint64_t seed) {
    auto w = make_weights<T>(cfg);
    std::mt19937_64 rng(seed);
    for (auto& k : w.layers) {
        const double sd = std::sqrt(2.0 / static_cast<double>(k.offsets.size() * k.in_channels));
        for (auto& v : k.weights) v = static_cast<T>(sd * normal01(rng));
    }
    return w;
}

// A trained model: network weights plus the entropy model of the residual features.
template <class T>
struct Model {
    NetworkWeights<T> net;
    FactorizedModel<T> entropy;
    nlohmann::json meta = nlohmann::json::object();  // free-form (lambda, training info)
};

// "PGW1" | u32 config length | config JSON | u32 layer count | per layer: name, stride,
// in, out, bias flag, offset count, offsets (3 x i32) | entropy channel count, per channel
// sym_min, sym_max (i32) | float32 arrays: per layer weights then bias, then entropy params.
template <class T>
std::vector<std::uint8_t> serialize_model(const Model<T>& m) {
    m.net.validate();
    ByteWriter w;
    for (char c : std::string("PGW1")) w.u8(static_cast<std::uint8_t>(c));
    nlohmann::json cfg = {{"network", m.net.config.to_json()}, {"meta", m.meta}};
    w.str(cfg.dump());
    w.u32(static_cast<std::uint32_t>(m.net.layers.size()));
    for (std::size_t i = 0; i < m.net.layers.size(); ++i) {
        const auto& k = m.net.layers[i];
        w.str(m.net.names[i]);
        w.u8(static_cast<std::uint8_t>(k.stride));
        w.u32(static_cast<std::uint32_t>(k.in_channels));
        w.u32(static_cast<std::uint32_t>(k.out_channels));
        w.u8(k.has_bias() ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(k.offsets.size()));
        for (const auto& o : k.offsets) {
            w.i32(o.x);
            w.i32(o.y);
            w.i32(o.z);
        }
    }
    w.u32(static_cast<std::uint32_t>(m.entropy.channels));
    for (int c = 0; c < m.entropy.channels; ++c) {
        w.i32(m.entropy.sym_min[c]);
        w.i32(m.entropy.sym_max[c]);
    }
    for (const auto& k : m.net.layers) {
        for (T v : k.weights) w.f32(static_cast<float>(v));
        for (T v : k.bias) w.f32(static_cast<float>(v));
    }
    for (T v : m.entropy.params) w.f32(static_cast<float>(v));
    return w.take();
}

template <class T>
Model<T> parse_model(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    auto magic = r.bytes(4);
    if (std::string(magic.begin(), magic.end()) != "PGW1") throw ParseError("not a weights file (bad magic)", 0);
    Model<T> m;
    const std::size_t cfg_pos = r.position();
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad weights config block: ") + e.what(), cfg_pos);
    }
    m.net.config = NetworkConfig::from_json(cfg.value("network", nlohmann::json::object()));
    m.meta = cfg.value("meta", nlohmann::json::object());
    const std::uint32_t n = r.u32();
    if (n > 4096) throw ParseError("implausible layer count", r.position());
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str(256);
        const int stride = r.u8();
        const auto in = r.u32(), out = r.u32();
        const bool bias = r.u8() != 0;
        const auto count = r.u32();
        if (in == 0 || out == 0 || in > 4096 || out > 4096 || count == 0 || count > 343)
            throw ParseError("implausible layer shape for " + name, r.position());
        std::vector<Coord3> offs(count);
        for (auto& o : offs) {
            o.x = r.i32();
            o.y = r.i32();
            o.z = r.i32();
        }
        m.net.names.push_back(std::move(name));
        m.net.layers.emplace_back(std::move(offs), static_cast<int>(in), static_cast<int>(out), stride, bias);
    }
    const auto channels = r.u32();
    if (channels > 4096) throw ParseError("implausible entropy channel count", r.position());
    m.entropy = FactorizedModel<T>::init(static_cast<int>(channels));
    for (std::uint32_t c = 0; c < channels; ++c) {
        m.entropy.sym_min[c] = r.i32();
        m.entropy.sym_max[c] = r.i32();
        if (m.entropy.sym_min[c] > m.entropy.sym_max[c]) throw ParseError("empty symbol range", r.position());
    }
    for (auto& k : m.net.layers) {
        for (auto& v : k.weights) v = static_cast<T>(r.f32());
        for (auto& v : k.bias) v = static_cast<T>(r.f32());
    }
    for (auto& v : m.entropy.params) v = static_cast<T>(r.f32());
    if (!r.at_end()) throw ParseError("trailing bytes after weights", r.position());

    // The manifest must match the layout the config implies.
    const auto expect = make_weights<T>(m.net.config);
    if (expect.names != m.net.names) throw ConfigError("weights manifest does not match the network config");
    for (std::size_t i = 0; i < expect.layers.size(); ++i) {
        const auto &a = expect.layers[i], &b = m.net.layers[i];
        if (a.offsets != b.offsets || a.in_channels != b.in_channels || a.out_channels != b.out_channels ||
            a.stride != b.stride || a.has_bias() != b.has_bias())
            throw ConfigError("layer '" + m.net.names[i] + "' has an unexpected shape");
    }
    if (m.entropy.channels != 0 && m.entropy.channels != m.net.config.latent_channels)
        throw ConfigError("entropy model channels do not match the latent width");
    m.net.validate();
    for (T v : m.entropy.params)
        if (!std::isfinite(static_cast<double>(v))) throw ConfigError("non-finite entropy parameter");
    return m;
}

template <class T>
Model<T> load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open weights file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_model<T>(bytes);
}

template <class T>
void save_model(const Model<T>& m, const std::filesystem::path& path) {
    auto bytes = serialize_model(m);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ConfigError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

// Identifier carried in bitstreams: CRC-32C of the serialized model.
template <class T>
std::uint32_t model_id(const Model<T>& m) {
    return crc32c(serialize_model(m));
}

inline std::uint32_t config_digest(const NetworkConfig& cfg) {
    const std::string s = cfg.to_json().dump();
    return crc32c(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace pgpc
