#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "pgpc/common.hpp"

namespace pgpc {

// Per-channel monotone density (non-parametric factorized prior). The cumulative is
// sigmoid(f(x)) with f a chain of four scalar-input stages of internal width 3:
//   h <- softplus(H_k) h + b_k, followed (stages 0..2) by h <- h + tanh(a_k) * tanh(h).
// softplus keeps every matrix positive and tanh(a) > -1 keeps every gate increasing, so f
// is strictly increasing for any parameter values.
template <class T>
struct FactorizedModel {
    static constexpr int kWidth = 3;
    // Raw matrices: 1x3, 3x3, 3x3, 3x1 -> 24 values; biases 3+3+3+1; gates 3+3+3.
    static constexpr int kMatrixOffset[4] = {0, 3, 12, 21};
    static constexpr int kBiasOffset[4] = {24, 27, 30, 33};
    static constexpr int kGateOffset[3] = {34, 37, 40};
    static constexpr int kParamsPerChannel = 43;
    static constexpr double kTailFloor = 1.0 / 65536.0;

    int channels = 0;
    std::vector<T> params;              // channels x kParamsPerChannel
    std::vector<std::int32_t> sym_min;  // coding range per channel, set after training
    std::vector<std::int32_t> sym_max;

    FactorizedModel() = default;

    // Fresh model with the density spread roughly `init_scale` wide. Biases and gates start
    // at zero, which makes f odd and the initial distribution symmetric about zero; the
    // matrices are jittered so the hidden units are not interchangeable.
    static FactorizedModel init(int channels, double init_scale = 10.0, std::uint64_t seed = 7, int range = 32) {
        FactorizedModel m;
        m.channels = channels;
        m.params.assign(static_cast<std::size_t>(channels) * kParamsPerChannel, T(0));
        m.sym_min.assign(channels, -range);
        m.sym_max.assign(channels, range);
        std::mt19937_64 rng(seed);
        const double scale = std::pow(init_scale, 1.0 / 4.0);
        const int dims_out[4] = {3, 3, 3, 1};
        for (int c = 0; c < channels; ++c) {
            T* p = m.params.data() + static_cast<std::size_t>(c) * kParamsPerChannel;
            for (int k = 0; k < 4; ++k) {
                double target = 1.0 / scale / dims_out[k];
                int n = k == 0 ? 3 : (k == 3 ? 3 : 9);
                for (int i = 0; i < n; ++i) {
                    double jitter = 1.0 + 0.2 * (uniform01(rng) - 0.5);
                    p[kMatrixOffset[k] + i] = static_cast<T>(std::log(std::expm1(target * jitter)));
                }
            }
        }
        return m;
    }

    std::span<T> channel_params(int c) {
        return {params.data() + static_cast<std::size_t>(c) * kParamsPerChannel, kParamsPerChannel};
    }
    std::span<const T> channel_params(int c) const {
        return {params.data() + static_cast<std::size_t>(c) * kParamsPerChannel, kParamsPerChannel};
    }

    // Parameter-derived constants (softplus of matrices, tanh of gates) for one channel.
    struct Derived {
        T mat[24];
        T gate[9];
    };

    Derived derive(int c) const {
        Derived d;
        auto p = channel_params(c);
        for (int i = 0; i < 24; ++i) d.mat[i] = softplus(p[i]);
        for (int i = 0; i < 9; ++i) d.gate[i] = std::tanh(p[34 + i]);
        return d;
    }

    // Forward activations kept for the adjoint.
    struct Trace {
        T pre[4][kWidth];  // stage k pre-gate values (stage 3 uses pre[3][0])
        T x;
        T f;
    };

    T logit(int c, T x, const Derived& d, Trace* tr = nullptr) const {
        auto p = channel_params(c);
        T h[kWidth] = {x, 0, 0};
        int in_dim = 1;
        for (int k = 0; k < 4; ++k) {
            int out_dim = k == 3 ? 1 : kWidth;
            T nh[kWidth] = {0, 0, 0};
            for (int o = 0; o < out_dim; ++o) {
                T acc = p[kBiasOffset[k] + o];
                for (int i = 0; i < in_dim; ++i) acc += d.mat[kMatrixOffset[k] + o * in_dim + i] * h[i];
                nh[o] = acc;
                if (tr) tr->pre[k][o] = acc;
            }
            if (k < 3)
                for (int o = 0; o < out_dim; ++o) nh[o] += d.gate[k * 3 + o] * std::tanh(nh[o]);
            for (int o = 0; o < kWidth; ++o) h[o] = nh[o];
            in_dim = out_dim;
        }
        if (tr) {
            tr->x = x;
            tr->f = h[0];
        }
        return h[0];
    }

    T logit(int c, T x) const { return logit(c, x, derive(c)); }
    T cdf(int c, T x) const { return sigmoid(logit(c, x)); }

    // Accumulates gf * d f / d(params of channel c) into gparams and returns gf * df/dx.
    T logit_backward(int c, const Trace& tr, const Derived& d, T gf, T* gparams) const {
        auto p = channel_params(c);
        // Recompute post-gate activations per stage from the stored pre-gate values.
        T post[4][kWidth];
        for (int k = 0; k < 4; ++k) {
            int out_dim = k == 3 ? 1 : kWidth;
            for (int o = 0; o < out_dim; ++o)
                post[k][o] = k < 3 ? tr.pre[k][o] + d.gate[k * 3 + o] * std::tanh(tr.pre[k][o]) : tr.pre[k][o];
        }
        T g[kWidth] = {gf, 0, 0};  // gradient w.r.t. stage output (post)
        for (int k = 3; k >= 0; --k) {
            int out_dim = k == 3 ? 1 : kWidth;
            int in_dim = k == 0 ? 1 : kWidth;
            T gpre[kWidth] = {0, 0, 0};
            for (int o = 0; o < out_dim; ++o) {
                if (k < 3) {
                    T th = std::tanh(tr.pre[k][o]);
                    T ta = d.gate[k * 3 + o];
                    gpre[o] = g[o] * (T(1) + ta * (T(1) - th * th));
                    if (gparams) gparams[kGateOffset[k] + o] += g[o] * th * (T(1) - ta * ta);
                } else {
                    gpre[o] = g[o];
                }
            }
            T gin[kWidth] = {0, 0, 0};
            for (int o = 0; o < out_dim; ++o) {
                if (gparams) gparams[kBiasOffset[k] + o] += gpre[o];
                for (int i = 0; i < in_dim; ++i) {
                    const int mi = kMatrixOffset[k] + o * in_dim + i;
                    T hin = k == 0 ? tr.x : post[k - 1][i];
                    if (gparams) gparams[mi] += gpre[o] * hin * sigmoid(p[mi]);
                    gin[i] += gpre[o] * d.mat[mi];
                }
            }
            for (int i = 0; i < kWidth; ++i) g[i] = gin[i];
        }
        return g[0];
    }

    // Unfloored probability mass of the unit interval centred at y.
    T mass(int c, T y, const Derived& d) const {
        T lo = logit(c, y - T(0.5), d);
        T up = logit(c, y + T(0.5), d);
        T s = (lo + up > 0) ? T(-1) : T(1);
        return std::abs(sigmoid(s * up) - sigmoid(s * lo));
    }

    T likelihood(int c, T y) const {
        T m = mass(c, y, derive(c));
        return std::max(m, static_cast<T>(kTailFloor));
    }

    // Total self-information in bits of row-major values y (rows x channels) and,
    // optionally, its gradient scaled by `upstream`. Gradients w.r.t. y are written to
    // grad_y (overwritten), gradients w.r.t. the density parameters accumulated into
    // grad_params. Below the tail floor the gradient still flows, pushing mass back up.
    T bits(std::span<const T> y, T upstream = T(0), std::span<T> grad_y = {}, std::span<T> grad_params = {}) const {
        if (channels <= 0) return T(0);
        const std::size_t rows = y.size() / static_cast<std::size_t>(channels);
        const bool want_grad = !grad_y.empty() || !grad_params.empty();
        std::vector<Derived> der;
        der.reserve(channels);
        for (int c = 0; c < channels; ++c) der.push_back(derive(c));
        double total = 0;
        const T inv_ln2 = static_cast<T>(1.0 / std::log(2.0));
        for (std::size_t r = 0; r < rows; ++r) {
            for (int c = 0; c < channels; ++c) {
                const std::size_t idx = r * static_cast<std::size_t>(channels) + c;
                const T v = y[idx];
                Trace tl, tu;
                T lo = logit(c, v - T(0.5), der[c], want_grad ? &tl : nullptr);
                T up = logit(c, v + T(0.5), der[c], want_grad ? &tu : nullptr);
                T s = (lo + up > 0) ? T(-1) : T(1);
                T m = std::abs(sigmoid(s * up) - sigmoid(s * lo));
                T pm = std::max(m, static_cast<T>(kTailFloor));
                total -= std::log(static_cast<double>(pm)) / std::log(2.0);
                if (!want_grad) continue;
                // d(-log2 p)/dp = -1/(p ln2); dp/dup = s'(up), dp/dlo = -s'(lo).
                T gp = -upstream * inv_ln2 / pm;
                T gup = gp * dsigmoid(up);
                T glo = -gp * dsigmoid(lo);
                T* gpar = grad_params.empty() ? nullptr
                                              : grad_params.data() + static_cast<std::size_t>(c) * kParamsPerChannel;
                T gx = logit_backward(c, tu, der[c], gup, gpar) + logit_backward(c, tl, der[c], glo, gpar);
                if (!grad_y.empty()) grad_y[idx] = gx;
            }
        }
        return static_cast<T>(total);
    }

    template <class U>
    FactorizedModel<U> cast() const {
        FactorizedModel<U> m;
        m.channels = channels;
        m.params.assign(params.begin(), params.end());
        m.sym_min = sym_min;
        m.sym_max = sym_max;
        return m;
    }

    static T sigmoid(T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
    }
    static T dsigmoid(T x) { return sigmoid(x) * sigmoid(-x); }
    static T softplus(T x) { return x > T(20) ? x : std::log1p(std::exp(x)); }
};

}  // namespace pgpc
