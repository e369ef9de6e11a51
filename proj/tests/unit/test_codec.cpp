#include <gtest/gtest.h>

#include <random>

#include "pgpc/codec/codec.hpp"
#include "pgpc/training/trainer.hpp"

using namespace pgpc;

namespace {

const TemplateModel& toy_template() {
    static const TemplateModel t = make_toy_template();
    return t;
}

const Model<float>& small_model() {
    static const Model<float> m = [] {
        TrainConfig c;
        c.network.widths = {4, 6, 8};
        c.network.latent_channels = 4;
        c.seed = 12;
        return initial_model<float>(c);
    }();
    return m;
}

struct Case {
    PointCloud source;
    PriorParams params;
};

Case toy_case(std::uint64_t seed) {
    ToyConfig tc;
    tc.precision = 6;
    const auto s = make_toy_sample(toy_template(), tc, seed);
    return {from_coords(s.source, 6), s.params};
}

CodecConfig with_params(const PriorParams& p) {
    CodecConfig c;
    c.params = p;
    c.seed = 7;
    return c;
}

}  // namespace

TEST(Codec, RoundTripKeepsThePointCount) {
    const auto c = toy_case(1);
    const auto enc = encode(c.source, 6, toy_template(), small_model(), with_params(c.params));
    const auto bs = parse_bitstream(enc.bytes);
    EXPECT_EQ(bs.header.counts.front(), c.source.size());
    EXPECT_EQ(bs.header.counts.size(), 4u);
    const auto dec = decode<float>(enc.bytes, toy_template(), small_model());
    EXPECT_FALSE(dec.clamped);
    EXPECT_EQ(dec.coords.size(), c.source.size());
    for (const auto& p : dec.coords)
        for (int v : {p.x, p.y, p.z}) {
            EXPECT_GE(v, 0);
            EXPECT_LT(v, 64);
        }
}

TEST(Codec, ContainerReserializesIdentically) {
    const auto c = toy_case(2);
    const auto enc = encode(c.source, 6, toy_template(), small_model(), with_params(c.params));
    EXPECT_EQ(serialize_bitstream(parse_bitstream(enc.bytes)), enc.bytes);
    EXPECT_EQ(serialize_bitstream(enc.bitstream), enc.bytes);
}

TEST(Codec, EncodeAndDecodeAreDeterministic) {
    const auto c = toy_case(3);
    const auto a = encode(c.source, 6, toy_template(), small_model(), with_params(c.params));
    const auto b = encode(c.source, 6, toy_template(), small_model(), with_params(c.params));
    EXPECT_EQ(a.bytes, b.bytes);
    EXPECT_EQ(decode<float>(a.bytes, toy_template(), small_model()).coords,
              decode<float>(a.bytes, toy_template(), small_model()).coords);
}

TEST(Codec, DecoderRebuildsTheEncoderPrior) {
    // Same quantized parameters and seed on both sides: the aligned cloud regenerated from
    // the header must equal the encoder's.
    const auto c = toy_case(4);
    const auto enc = encode(c.source, 6, toy_template(), small_model(), with_params(c.params));
    const auto& h = enc.bitstream.header;
    const auto q = decode_params(enc.bitstream.params);
    const auto rebuilt = prior_voxels(toy_template(), dequantize_params(q),
                                      detail::aligned_count(h.counts[0], h.ratio_fixed), h.precision,
                                      detail::aligned_seed(h.seed));
    EXPECT_FALSE(enc.aligned.empty());
    EXPECT_EQ(rebuilt, enc.aligned);
}

TEST(Codec, ParameterSubstreamIsFixedSize) {
    for (std::uint64_t seed : {5, 6}) {
        const auto c = toy_case(seed);
        const auto enc = encode(c.source, 6, toy_template(), small_model(), with_params(c.params));
        EXPECT_EQ(8 * enc.bitstream.params.size(), 1376u + 32u);
    }
}

TEST(Codec, FittedParametersAlsoRoundTrip) {
    const auto c = toy_case(7);
    CodecConfig cfg;
    cfg.fit.steps = 10;
    const auto enc = encode(c.source, 6, toy_template(), small_model(), cfg);
    EXPECT_TRUE(enc.bitstream.header.prior);
    EXPECT_EQ(decode<float>(enc.bytes, toy_template(), small_model()).coords.size(), c.source.size());
}

TEST(Codec, PriorOffDegeneratesToDirectCoding) {
    const auto c = toy_case(8);
    CodecConfig cfg;
    cfg.use_prior = false;
    const auto enc = encode(c.source, 6, toy_template(), small_model(), cfg);
    EXPECT_TRUE(enc.bitstream.params.empty());
    EXPECT_TRUE(enc.aligned.empty());
    EXPECT_EQ(enc.bitstream.header.scale_fixed, 0u);
    const auto r = bitstream_report(enc.bytes);
    EXPECT_EQ(r.part("parameters").bits, 0u);
    EXPECT_EQ(r.part("parameters").percent, 0.0);
    EXPECT_EQ(decode<float>(enc.bytes, toy_template(), small_model()).coords.size(), c.source.size());
}

TEST(Report, PartsAccountForTheWholeFile) {
    const auto c = toy_case(9);
    const auto enc = encode(c.source, 6, toy_template(), small_model(), with_params(c.params));
    const auto r = bitstream_report(enc.bytes);
    std::uint64_t bits = 0;
    double pct = 0;
    for (const auto& p : r.parts) {
        bits += p.bits;
        pct += p.percent;
    }
    EXPECT_EQ(bits, 8 * enc.bytes.size());
    EXPECT_NEAR(pct, 100.0, 0.01);
    EXPECT_EQ(r.points, c.source.size());
    EXPECT_DOUBLE_EQ(r.bpp, 8.0 * static_cast<double>(enc.bytes.size()) / static_cast<double>(c.source.size()));
    EXPECT_EQ(r.part("parameters").bits, 1408u);
    EXPECT_THROW(r.part("nothing"), ContractError);
}

TEST(Codec, RejectsBadInputs) {
    const auto c = toy_case(10);
    EXPECT_THROW(encode(c.source, 2, toy_template(), small_model(), with_params(c.params)), ConfigError);
    PointCloud off = c.source;
    off.points[0].x() += 0.5;
    EXPECT_THROW(encode(off, 6, toy_template(), small_model(), with_params(c.params)), DegenerateInputError);
    CodecConfig bad = with_params(c.params);
    bad.sampling_ratio = 0;
    EXPECT_THROW(encode(c.source, 6, toy_template(), small_model(), bad), ConfigError);
}

TEST(Codec, ChecksumMismatchIsADecodeError) {
    const auto c = toy_case(11);
    auto bytes = encode(c.source, 6, toy_template(), small_model(), with_params(c.params)).bytes;
    bytes[bytes.size() - 6] ^= 0x10;  // inside the feature payload
    EXPECT_THROW(decode<float>(bytes, toy_template(), small_model()), DecodeError);
}

TEST(Codec, WrongModelIsADecodeError) {
    const auto c = toy_case(12);
    const auto bytes = encode(c.source, 6, toy_template(), small_model(), with_params(c.params)).bytes;
    Model<float> other = small_model();
    other.net.layers.front().weights[0] += 1.0f;
    EXPECT_THROW(decode<float>(bytes, toy_template(), other), DecodeError);
}

TEST(Codec, UnknownMajorVersionIsRejected) {
    const auto c = toy_case(13);
    auto bytes = encode(c.source, 6, toy_template(), small_model(), with_params(c.params)).bytes;
    bytes[4] = kBitstreamMajor + 1;
    EXPECT_THROW(parse_bitstream(bytes), DecodeError);
    bytes[0] = 'X';
    EXPECT_THROW(parse_bitstream(bytes), ParseError);
}

TEST(Codec, TruncationsAndMutationsGiveStructuredErrors) {
    const auto c = toy_case(14);
    const auto good = encode(c.source, 6, toy_template(), small_model(), with_params(c.params)).bytes;
    for (std::size_t n = 0; n < good.size(); ++n) {
        const std::vector<std::uint8_t> cut(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(n));
        EXPECT_THROW(decode<float>(cut, toy_template(), small_model()), Error) << n;
    }
    std::mt19937_64 rng(15);
    int failures = 0;
    for (int trial = 0; trial < 300; ++trial) {
        auto bytes = good;
        const int flips = 1 + static_cast<int>(rng() % 4);
        for (int f = 0; f < flips; ++f) bytes[rng() % bytes.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        try {
            decode<float>(bytes, toy_template(), small_model());
        } catch (const Error&) {
            ++failures;
        }
    }
    EXPECT_GT(failures, 0);
}

TEST(Codec, OversizedHeaderCountsAreRejected) {
    const auto c = toy_case(16);
    auto bs = encode(c.source, 6, toy_template(), small_model(), with_params(c.params)).bitstream;
    bs.header.counts[0] = 9 * bs.header.counts[1];
    EXPECT_THROW(parse_bitstream(serialize_bitstream(bs)), DecodeError);
}
