#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

namespace pgpc {

// Carry-less range coder (Subbotin style) on 64-bit registers with byte-wise
// renormalisation. Frequencies are 16-bit: every symbol is coded against a total of 2^16.
class RangeEncoder {
public:
    static constexpr int kPrecision = 16;
    static constexpr std::uint64_t kTop = 1ull << 56;
    static constexpr std::uint64_t kBot = 1ull << 48;

    void encode(std::uint32_t cum, std::uint32_t freq) {
        range_ >>= kPrecision;
        low_ += cum * range_;
        range_ *= freq;
        used_ = true;
        normalize();
    }

    // Codes `bits` (<= 16) raw bits with a flat distribution.
    void encode_raw(std::uint32_t value, int bits) {
        encode(value << (kPrecision - bits), 1u << (kPrecision - bits));
    }

    // Adaptive binary symbol; p0 is the 16-bit probability of a zero.
    void encode_bit(int bit, std::uint32_t p0) {
        if (bit)
            encode(p0, (1u << kPrecision) - p0);
        else
            encode(0, p0);
    }

    // Emits the shortest byte prefix that identifies a value inside [low, low + range);
    // the decoder reads missing trailing bytes as zero.
    std::vector<std::uint8_t> finish() {
        if (used_) {
            for (int n = 1; n <= 8; ++n) {
                const int drop = 64 - 8 * n;
                const std::uint64_t mask = drop == 0 ? 0 : ((1ull << drop) - 1);
                const unsigned __int128 v = ((static_cast<unsigned __int128>(low_) + mask) & ~static_cast<unsigned __int128>(mask));
                if (v < static_cast<unsigned __int128>(low_) + range_) {
                    const std::uint64_t val = static_cast<std::uint64_t>(v);
                    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(val >> (56 - 8 * i)));
                    break;
                }
            }
        }
        used_ = false;
        return std::move(out_);
    }

private:
    void normalize() {
        while ((low_ ^ (low_ + range_)) < kTop || (range_ < kBot && ((range_ = (0 - low_) & (kBot - 1)), true))) {
            out_.push_back(static_cast<std::uint8_t>(low_ >> 56));
            low_ <<= 8;
            range_ <<= 8;
        }
    }

    std::uint64_t low_ = 0;
    std::uint64_t range_ = ~0ull;
    bool used_ = false;
    std::vector<std::uint8_t> out_;
};

class RangeDecoder {
public:
    static constexpr int kPrecision = RangeEncoder::kPrecision;

    explicit RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
        for (int i = 0; i < 8; ++i) code_ = (code_ << 8) | next();
    }

    // Returns the cumulative-frequency target; follow with update().
    std::uint32_t peek() {
        range_ >>= kPrecision;
        std::uint64_t v = (code_ - low_) / range_;
        return v >= (1u << kPrecision) ? (1u << kPrecision) - 1 : static_cast<std::uint32_t>(v);
    }

    void update(std::uint32_t cum, std::uint32_t freq) {
        low_ += cum * range_;
        range_ *= freq;
        while ((low_ ^ (low_ + range_)) < RangeEncoder::kTop ||
               (range_ < RangeEncoder::kBot && ((range_ = (0 - low_) & (RangeEncoder::kBot - 1)), true))) {
            code_ = (code_ << 8) | next();
            low_ <<= 8;
            range_ <<= 8;
        }
    }

    std::uint32_t decode_raw(int bits) {
        std::uint32_t v = peek() >> (kPrecision - bits);
        update(v << (kPrecision - bits), 1u << (kPrecision - bits));
        return v;
    }

    int decode_bit(std::uint32_t p0) {
        std::uint32_t t = peek();
        if (t < p0) {
            update(0, p0);
            return 0;
        }
        update(p0, (1u << kPrecision) - p0);
        return 1;
    }

    // Bytes consumed beyond the end of the buffer (zero padding is legitimate for the
    // final few bytes; large overruns mean a corrupted stream).
    std::size_t overrun() const { return overrun_; }

private:
    std::uint8_t next() {
        if (pos_ < data_.size()) return data_[pos_++];
        ++overrun_;
        return 0;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::size_t overrun_ = 0;
    std::uint64_t low_ = 0;
    std::uint64_t range_ = ~0ull;
    std::uint64_t code_ = 0;
};

// Adaptive binary probability with shift update, kept away from 0 and 1.
class AdaptiveBit {
public:
    std::uint32_t p0() const { return p0_; }
    void update(int bit) {
        if (bit)
            p0_ -= p0_ >> kRate;
        else
            p0_ += ((1u << 16) - p0_) >> kRate;
        p0_ = std::clamp<std::uint32_t>(p0_, kMin, (1u << 16) - kMin);
    }

private:
    static constexpr int kRate = 5;
    static constexpr std::uint32_t kMin = 64;
    std::uint32_t p0_ = 1u << 15;
};

}  // namespace pgpc
