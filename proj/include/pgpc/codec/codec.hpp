#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pgpc/entropy/feature_coder.hpp"
#include "pgpc/entropy/octree_coder.hpp"
#include "pgpc/geometry/voxelize.hpp"
#include "pgpc/network/network.hpp"
#include "pgpc/prior/aligned.hpp"
#include "pgpc/prior/fitter.hpp"

namespace pgpc {

inline constexpr std::uint8_t kBitstreamMajor = 1;

struct BitstreamHeader {
    std::uint8_t version = kBitstreamMajor;
    int precision = 0;
    int scales = 0;
    std::uint32_t model_id = 0;
    std::uint32_t config_digest = 0;
    std::vector<std::uint64_t> counts;  // N^0..N^L
    bool prior = false;
    std::uint32_t scale_fixed = 0;      // similarity scale, 16.16; 0 without prior
    std::uint16_t ratio_fixed = 256;    // aligned samples per source point, 8.8
    std::uint64_t seed = 0;
};

struct Bitstream {
    BitstreamHeader header;
    std::vector<std::uint8_t> params;    // empty without prior
    std::vector<std::uint8_t> coords;    // octree stream of the scale-L coordinates
    std::vector<std::uint8_t> features;  // residual features
};

inline std::vector<std::uint8_t> serialize_bitstream(const Bitstream& bs) {
    const auto& h = bs.header;
    ByteWriter w;
    for (char c : std::string("PGPC")) w.u8(static_cast<std::uint8_t>(c));
    w.u8(h.version);
    w.u8(static_cast<std::uint8_t>(h.precision));
    w.u8(static_cast<std::uint8_t>(h.scales));
    w.u32(h.model_id);
    w.u32(h.config_digest);
    for (auto n : h.counts) w.varint(n);
    w.u8(h.prior ? 1 : 0);
    w.u32(h.scale_fixed);
    w.u16(h.ratio_fixed);
    w.u64(h.seed);
    for (const auto* sub : {&bs.params, &bs.coords, &bs.features}) {
        w.varint(sub->size());
        w.bytes(*sub);
        w.u32(crc32c(*sub));
    }
    return w.take();
}

// Total: any byte sequence parses fully or throws ParseError / DecodeError.
inline Bitstream parse_bitstream(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    Bitstream bs;
    auto& h = bs.header;
    const auto magic = r.bytes(4);
    if (std::string(magic.begin(), magic.end()) != "PGPC") throw ParseError("not a PGPC bitstream", 0);
    h.version = r.u8();
    if (h.version != kBitstreamMajor)
        throw DecodeError("unsupported bitstream version " + std::to_string(h.version));
    h.precision = r.u8();
    h.scales = r.u8();
    if (h.precision < 1 || h.precision > 21) throw DecodeError("precision out of range");
    if (h.scales < 1 || h.scales > h.precision) throw DecodeError("scale count out of range");
    h.model_id = r.u32();
    h.config_digest = r.u32();
    for (int l = 0; l <= h.scales; ++l) {
        h.counts.push_back(r.varint());
        if (h.counts.back() == 0) throw DecodeError("empty scale in header");
        if (l > 0 && h.counts[l] > h.counts[l - 1]) throw DecodeError("point counts must not grow with scale");
        // A voxel has at most 8 children, so N^l <= 8 N^(l+1). With N^L tied to the decoded
        // coordinates this bounds every allocation by the payload size.
        if (l > 0 && h.counts[l - 1] > 8 * h.counts[l]) throw DecodeError("point count exceeds 8x the next scale");
    }
    if (h.counts[0] > (1ull << std::min(3 * h.precision, 40))) throw DecodeError("point count exceeds the lattice");
    const auto flag = r.u8();
    if (flag > 1) throw DecodeError("bad prior flag");
    h.prior = flag == 1;
    h.scale_fixed = r.u32();
    h.ratio_fixed = r.u16();
    if (h.ratio_fixed == 0) throw DecodeError("sampling ratio is zero");
    h.seed = r.u64();
    for (auto* sub : {&bs.params, &bs.coords, &bs.features}) {
        const std::uint64_t n = r.varint();
        if (n > r.remaining()) throw ParseError("substream length exceeds the file", r.position());
        const auto body = r.bytes(static_cast<std::size_t>(n));
        *sub = std::vector<std::uint8_t>(body.begin(), body.end());
        if (r.u32() != crc32c(*sub)) throw DecodeError("substream checksum mismatch");
    }
    if (!r.at_end()) throw ParseError("trailing bytes after the last substream", r.position());
    if (h.prior != !bs.params.empty()) throw DecodeError("prior flag disagrees with the parameter substream");
    if (!h.prior && h.scale_fixed != 0) throw DecodeError("scale present without prior");
    return bs;
}

struct CodecConfig {
    bool use_prior = true;
    std::optional<PriorParams> params;  // otherwise fitted
    double sampling_ratio = 1.0;        // aligned samples per source point, stored at 1/256 resolution
    std::uint64_t seed = 1;
    FitConfig fit;
};

namespace detail {

inline std::uint64_t aligned_seed(std::uint64_t seed) { return mix_seed(seed, 2); }

inline std::size_t aligned_count(std::uint64_t points, std::uint16_t ratio_fixed) {
    return static_cast<std::size_t>((points * ratio_fixed + 255) / 256);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Warped latent on `target`: zeros when no aligned voxels exist.
template <class T>
NodeId<T> warped_on(Graph<T>& G, const std::vector<Coord3>& aligned, const std::vector<Coord3>& target,
                    const NetworkWeights<T>& w) {
    if (aligned.empty()) return G.constant(SparseTensor<T>(target, w.config.latent_channels, w.config.scales));
    const StackIds al = extract_features(G, aligned, w);
    return warp_features(G, al, target, w);
}

}  // namespace detail

struct EncodeResult {
    Bitstream bitstream;
    std::vector<std::uint8_t> bytes;
    std::vector<Coord3> aligned;  // the decoder will rebuild exactly this set
};

// `source` must be a lattice cloud at `precision`.
template <class T>
EncodeResult encode(const PointCloud& source, int precision, const TemplateModel& t, const Model<T>& m,
                    const CodecConfig& cfg) {
    const auto& net = m.net.config;
    if (precision < net.scales || precision > 21) throw ConfigError("precision must be in [scales, 21]");
    if (!is_lattice_cloud(source, precision))
        throw DegenerateInputError("source is not voxelized at precision " + std::to_string(precision));
    const double ratio = std::round(cfg.sampling_ratio * 256);
    if (!(ratio >= 1 && ratio <= 65535)) throw ConfigError("sampling ratio must be in [1/256, 255]");
    std::vector<Coord3> coords = to_coords(source);
    canonicalize(coords);
    if (coords.empty()) throw DegenerateInputError("source cloud is empty");

    EncodeResult out;
    auto& h = out.bitstream.header;
    h.precision = precision;
    h.scales = net.scales;
    h.model_id = model_id(m);
    h.config_digest = config_digest(net);
    h.seed = cfg.seed;
    h.prior = cfg.use_prior;
    h.ratio_fixed = static_cast<std::uint16_t>(ratio);

    if (cfg.use_prior) {
        PriorParams p;
        if (cfg.params) {
            p = *cfg.params;
        } else {
            FitConfig fc = cfg.fit;
            fc.seed = mix_seed(cfg.seed, 1);
            p = fit_params(from_coords(coords, precision), t, fc);
        }
        const QuantizedParams q = quantize_params(p);
        out.bitstream.params = encode_params(q);
        h.scale_fixed = q.scale_fixed;
        out.aligned = prior_voxels(t, dequantize_params(q), detail::aligned_count(coords.size(), h.ratio_fixed),
                                   precision, detail::aligned_seed(cfg.seed));
    }

    Graph<T> G(false);
    const StackIds src = extract_features(G, coords, m.net);
    const SparseTensor<T> fs = G.value(src.scales.back());
    const auto& warped = G.value(detail::warped_on(G, out.aligned, fs.coords, m.net));
    std::vector<T> delta(fs.feats.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = fs.feats[i] - warped.feats[i];
    delta = round_features<T>(delta);
    for (auto n : src.counts) h.counts.push_back(n);
    out.bitstream.coords = encode_coords(fs.coords, precision - net.scales);
    out.bitstream.features = encode_features<T>(delta, m.entropy);
    out.bytes = serialize_bitstream(out.bitstream);
    return out;
}

struct DecodeResult {
    std::vector<Coord3> coords;  // canonical
    bool clamped = false;        // some scale had fewer candidates than its count
};

template <class T>
DecodeResult decode(std::span<const std::uint8_t> bytes, const TemplateModel& t, const Model<T>& m) {
    const Bitstream bs = parse_bitstream(bytes);
    const auto& h = bs.header;
    const auto& net = m.net.config;
    if (h.model_id != model_id(m)) throw DecodeError("bitstream was produced with a different model");
    if (h.config_digest != config_digest(net) || h.scales != net.scales)
        throw DecodeError("bitstream network configuration does not match the model");

    std::vector<Coord3> aligned;
    if (h.prior) {
        QuantizedParams q;
        try {
            q = decode_params(bs.params);
        } catch (const ParseError& e) {
            throw DecodeError(std::string("parameter substream: ") + e.what());
        }
        if (q.scale_fixed != h.scale_fixed) throw DecodeError("header scale disagrees with the parameter substream");
        aligned = prior_voxels(t, dequantize_params(q), detail::aligned_count(h.counts[0], h.ratio_fixed), h.precision,
                               detail::aligned_seed(h.seed));
    }

    int depth = -1;
    std::vector<Coord3> coords;
    try {
        coords = decode_coords(bs.coords, &depth);
    } catch (const ParseError& e) {
        throw DecodeError(std::string("coordinate substream: ") + e.what());
    }
    if (depth != h.precision - h.scales) throw DecodeError("coordinate depth disagrees with the header");
    if (coords.size() != h.counts.back()) throw DecodeError("coordinate count disagrees with the header");

    std::vector<T> delta;
    try {
        delta = decode_features<T>(bs.features, m.entropy, coords.size(), net.latent_channels);
    } catch (const ParseError& e) {
        throw DecodeError(std::string("feature substream: ") + e.what());
    }

    Graph<T> G(false);
    const auto& warped = G.value(detail::warped_on(G, aligned, coords, m.net));
    SparseTensor<T> latent(coords, std::move(delta), net.latent_channels, net.scales);
    for (std::size_t i = 0; i < latent.feats.size(); ++i) latent.feats[i] += warped.feats[i];

    std::vector<std::size_t> counts;
    for (int s = net.scales - 1; s >= 0; --s) counts.push_back(static_cast<std::size_t>(h.counts[s]));
    auto prop = propagate(G, G.constant(std::move(latent)), counts, m.net, nullptr, h.precision);
    DecodeResult out;
    out.coords = std::move(prop.decoded);
    canonicalize(out.coords);
    out.clamped = prop.clamped;
    return out;
}

struct SubstreamShare {
    std::string name;
    std::uint64_t bits = 0;
    double percent = 0;
};

// Composition of a file: the three payloads plus everything else (header, lengths,
// checksums). Bits sum to the file size and percentages to 100.
struct BitstreamReport {
    std::uint64_t total_bits = 0;
    std::uint64_t points = 0;  // N^0
    double bpp = 0;
    std::vector<SubstreamShare> parts;  // parameters, coordinates, features, framing

    const SubstreamShare& part(const std::string& name) const {
        for (const auto& p : parts)
            if (p.name == name) return p;
        throw ContractError("no substream named " + name);
    }
};

inline BitstreamReport bitstream_report(std::span<const std::uint8_t> bytes) {
    const Bitstream bs = parse_bitstream(bytes);
    BitstreamReport r;
    r.total_bits = 8ull * bytes.size();
    r.points = bs.header.counts[0];
    r.bpp = static_cast<double>(r.total_bits) / static_cast<double>(r.points);
    const std::uint64_t pb = 8ull * bs.params.size(), cb = 8ull * bs.coords.size(), fb = 8ull * bs.features.size();
    r.parts = {{"parameters", pb}, {"coordinates", cb}, {"features", fb}, {"framing", r.total_bits - pb - cb - fb}};
    for (auto& p : r.parts) p.percent = 100.0 * static_cast<double>(p.bits) / static_cast<double>(r.total_bits);
    return r;
}

}  // namespace pgpc
