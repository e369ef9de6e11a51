#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "pgpc/common.hpp"
#include "pgpc/entropy/factorized.hpp"
#include "pgpc/entropy/range_coder.hpp"

namespace pgpc {

enum class QuantMode { train, infer };

// Infer: round half away from zero. Train: additive U(-0.5, 0.5) noise from `rng`.
template <class T, class Engine>
std::vector<T> quantize_features(std::span<const T> f, QuantMode mode, Engine& rng) {
    std::vector<T> out(f.begin(), f.end());
    if (mode == QuantMode::infer) {
        for (auto& v : out) v = std::round(v);
    } else {
        for (auto& v : out) v += static_cast<T>(uniform01(rng) - 0.5);
    }
    return out;
}

template <class T>
std::vector<T> round_features(std::span<const T> f) {
    std::vector<T> out(f.begin(), f.end());
    for (auto& v : out) v = std::round(v);
    return out;
}

// Discretised model for one channel: symbols sym_min..sym_max, then one escape symbol.
// cum has (count + 2) entries, strictly increasing from 0 to 2^16.
struct ChannelTable {
    std::int32_t sym_min = 0;
    std::int32_t sym_max = 0;
    std::vector<std::uint32_t> cum;

    std::size_t symbols() const { return static_cast<std::size_t>(sym_max - sym_min + 1); }
    std::uint32_t escape_index() const { return static_cast<std::uint32_t>(symbols()); }
};

struct CdfTable {
    static constexpr std::uint32_t kTotal = 1u << 16;
    static constexpr std::int32_t kMaxSymbols = 1 << 14;
    std::vector<ChannelTable> channels;
};

template <class T>
CdfTable build_cdf_table(const FactorizedModel<T>& model) {
    CdfTable table;
    auto dm = model.template cast<double>();
    for (int c = 0; c < model.channels; ++c) {
        ChannelTable ch;
        ch.sym_min = model.sym_min[c];
        ch.sym_max = model.sym_max[c];
        if (ch.sym_max < ch.sym_min || ch.sym_max - ch.sym_min + 1 > CdfTable::kMaxSymbols)
            throw ConfigError("invalid coding range for channel " + std::to_string(c));
        const std::size_t n = ch.symbols();
        auto d = dm.derive(c);
        std::vector<double> p(n + 1);
        double inside = 0;
        for (std::size_t k = 0; k < n; ++k) {
            p[k] = dm.mass(c, static_cast<double>(ch.sym_min + static_cast<std::int32_t>(k)), d);
            inside += p[k];
        }
        p[n] = std::max(0.0, 1.0 - inside);
        const std::uint32_t avail = CdfTable::kTotal - static_cast<std::uint32_t>(n + 1);
        std::vector<std::uint32_t> freq(n + 1);
        std::uint64_t sum = 0;
        std::size_t largest = 0;
        for (std::size_t k = 0; k <= n; ++k) {
            freq[k] = 1 + static_cast<std::uint32_t>(std::floor(p[k] * avail));
            sum += freq[k];
            if (freq[k] > freq[largest]) largest = k;
        }
        // floor() never overshoots, so the remainder is nonnegative.
        freq[largest] += static_cast<std::uint32_t>(CdfTable::kTotal - sum);
        ch.cum.resize(n + 2);
        ch.cum[0] = 0;
        for (std::size_t k = 0; k <= n; ++k) ch.cum[k + 1] = ch.cum[k] + freq[k];
        table.channels.push_back(std::move(ch));
    }
    return table;
}

// Stream layout: u32 payload length, u32 CRC-32C of payload, payload (range-coded symbols
// in row-major order). Out-of-range symbols are coded as the escape symbol followed by
// the raw 32-bit two's-complement value.
inline std::vector<std::uint8_t> encode_symbols(std::span<const std::int32_t> symbols, const CdfTable& table) {
    const std::size_t nch = table.channels.size();
    RangeEncoder enc;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        const auto& ch = table.channels[i % nch];
        const std::int32_t s = symbols[i];
        if (s >= ch.sym_min && s <= ch.sym_max) {
            const std::size_t k = static_cast<std::size_t>(s - ch.sym_min);
            enc.encode(ch.cum[k], ch.cum[k + 1] - ch.cum[k]);
        } else {
            const std::uint32_t e = ch.escape_index();
            enc.encode(ch.cum[e], ch.cum[e + 1] - ch.cum[e]);
            const auto u = static_cast<std::uint32_t>(s);
            enc.encode_raw(u >> 16, 16);
            enc.encode_raw(u & 0xffff, 16);
        }
    }
    auto payload = enc.finish();
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.u32(crc32c(payload));
    w.bytes(payload);
    return w.take();
}

inline std::vector<std::int32_t> decode_symbols(std::span<const std::uint8_t> bytes, const CdfTable& table,
                                                std::size_t count) {
    ByteReader r(bytes);
    const std::uint32_t len = r.u32();
    const std::uint32_t crc = r.u32();
    auto payload = r.bytes(len);
    if (crc32c(payload) != crc) throw DecodeError("feature stream checksum mismatch");
    const std::size_t nch = table.channels.size();
    if (count > 0 && nch == 0) throw DecodeError("feature stream has no channel tables");
    std::vector<std::int32_t> out;
    out.reserve(count);
    RangeDecoder dec(payload);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& ch = table.channels[i % nch];
        const std::uint32_t t = dec.peek();
        auto it = std::upper_bound(ch.cum.begin(), ch.cum.end(), t);
        const std::size_t k = static_cast<std::size_t>(it - ch.cum.begin()) - 1;
        dec.update(ch.cum[k], ch.cum[k + 1] - ch.cum[k]);
        if (k == ch.escape_index()) {
            std::uint32_t hi = dec.decode_raw(16);
            std::uint32_t lo = dec.decode_raw(16);
            out.push_back(static_cast<std::int32_t>((hi << 16) | lo));
        } else {
            out.push_back(ch.sym_min + static_cast<std::int32_t>(k));
        }
        if (dec.overrun() > 8) throw DecodeError("feature stream ended early");
    }
    return out;
}

// Feature-level entry points: F-hat must already be integral (infer-mode quantized).
template <class T>
std::vector<std::uint8_t> encode_features(std::span<const T> fhat, const FactorizedModel<T>& model) {
    std::vector<std::int32_t> sym(fhat.size());
    for (std::size_t i = 0; i < fhat.size(); ++i) {
        const double v = static_cast<double>(fhat[i]);
        if (v != std::round(v) || v < -2147483648.0 || v > 2147483647.0)
            throw ContractError("feature symbol is not an in-range integer");
        sym[i] = static_cast<std::int32_t>(v);
    }
    return encode_symbols(sym, build_cdf_table(model));
}

template <class T>
std::vector<T> decode_features(std::span<const std::uint8_t> bytes, const FactorizedModel<T>& model,
                               std::size_t count, int channels) {
    if (channels != model.channels) throw ConfigError("channel count does not match the entropy model");
    auto sym = decode_symbols(bytes, build_cdf_table(model), count * static_cast<std::size_t>(channels));
    return std::vector<T>(sym.begin(), sym.end());
}

// Draws integer symbols from the coding distribution of each channel (test and
// calibration helper; row-major, `rows` x channels).
template <class T, class Engine>
std::vector<std::int32_t> sample_symbols(const FactorizedModel<T>& model, std::size_t rows, Engine& rng) {
    auto dm = model.template cast<double>();
    std::vector<std::vector<double>> cdfs(model.channels);
    for (int c = 0; c < model.channels; ++c) {
        auto d = dm.derive(c);
        double acc = 0;
        for (std::int32_t s = model.sym_min[c]; s <= model.sym_max[c]; ++s) {
            acc += dm.mass(c, s, d);
            cdfs[c].push_back(acc);
        }
        for (auto& v : cdfs[c]) v /= acc;
    }
    std::vector<std::int32_t> out(rows * static_cast<std::size_t>(model.channels));
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int c = static_cast<int>(i % static_cast<std::size_t>(model.channels));
        const double u = uniform01(rng);
        auto it = std::lower_bound(cdfs[c].begin(), cdfs[c].end(), u);
        std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - cdfs[c].begin()), cdfs[c].size() - 1);
        out[i] = model.sym_min[c] + static_cast<std::int32_t>(k);
    }
    return out;
}

}  // namespace pgpc
