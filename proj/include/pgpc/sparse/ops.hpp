#pragma once

#include <Eigen/Core>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pgpc/sparse/tensor.hpp"

namespace pgpc {

// Kernel offsets of the cube [lo, hi]^3 in lexicographic order.
inline std::vector<Coord3> cube_offsets(int lo, int hi) {
    std::vector<Coord3> out;
    for (int x = lo; x <= hi; ++x)
        for (int y = lo; y <= hi; ++y)
            for (int z = lo; z <= hi; ++z) out.push_back({x, y, z});
    return out;
}

// weights holds one (in_channels x out_channels) row-major block per offset.
template <class T>
struct ConvKernel {
    std::vector<Coord3> offsets;
    std::vector<T> weights;
    std::vector<T> bias;  // empty when the layer has no bias
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;

    ConvKernel() = default;
    ConvKernel(std::vector<Coord3> offs, int in, int out, int s = 1, bool with_bias = false)
        : offsets(std::move(offs)),
          weights(offsets.size() * static_cast<std::size_t>(in) * static_cast<std::size_t>(out), T(0)),
          bias(with_bias ? static_cast<std::size_t>(out) : 0, T(0)),
          in_channels(in),
          out_channels(out),
          stride(s) {}

    std::size_t block() const { return static_cast<std::size_t>(in_channels) * static_cast<std::size_t>(out_channels); }
    T* weight(std::size_t k) { return weights.data() + k * block(); }
    const T* weight(std::size_t k) const { return weights.data() + k * block(); }
    bool has_bias() const { return !bias.empty(); }

    void validate() const {
        if (in_channels <= 0 || out_channels <= 0) throw ConfigError("kernel channel counts must be positive");
        if (stride != 1 && stride != 2) throw ConfigError("kernel stride must be 1 or 2");
        if (offsets.empty()) throw ConfigError("kernel has no offsets");
        if (!is_canonical(offsets)) throw ConfigError("kernel offsets must be unique and sorted");
        if (weights.size() != offsets.size() * block()) throw ConfigError("kernel weight count mismatch");
        if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_channels))
            throw ConfigError("kernel bias size mismatch");
    }

    template <class U>
    ConvKernel<U> cast() const {
        ConvKernel<U> k;
        k.offsets = offsets;
        k.weights.assign(weights.begin(), weights.end());
        k.bias.assign(bias.begin(), bias.end());
        k.in_channels = in_channels;
        k.out_channels = out_channels;
        k.stride = stride;
        return k;
    }
};

// Output coordinates plus, per output row, the (input row, offset index) pairs that feed
// it, in accumulation order. Every convolution flavour reduces to one of these maps, so
// forward and adjoint share a single implementation.
struct GatherMap {
    std::vector<Coord3> out_coords;
    std::vector<std::int32_t> row_ptr{0};
    std::vector<std::int32_t> in_rows;
    std::vector<std::int32_t> kernel_idx;
    std::size_t in_count = 0;

    std::size_t out_count() const { return out_coords.size(); }
};

namespace detail {

inline GatherMap gather_by_lookup(std::vector<Coord3> out_coords, const std::vector<Coord3>& in_coords,
                                  const std::vector<Coord3>& offsets, int base_mul) {
    GatherMap m;
    m.in_count = in_coords.size();
    m.out_coords = std::move(out_coords);
    m.row_ptr.reserve(m.out_coords.size() + 1);
    if (!in_coords.empty()) {
        CoordIndex idx = make_index(in_coords);
        for (const auto& u : m.out_coords) {
            Coord3 base{u.x * base_mul, u.y * base_mul, u.z * base_mul};
            for (std::size_t k = 0; k < offsets.size(); ++k) {
                auto it = idx.find(base + offsets[k]);
                if (it != idx.end()) {
                    m.in_rows.push_back(it->second);
                    m.kernel_idx.push_back(static_cast<std::int32_t>(k));
                }
            }
            m.row_ptr.push_back(static_cast<std::int32_t>(m.in_rows.size()));
        }
    } else {
        m.row_ptr.assign(m.out_coords.size() + 1, 0);
    }
    return m;
}

}  // namespace detail

// Map for an ordinary sparse convolution: stride 1 keeps the input coordinates,
// stride 2 produces the floor-halved set and gathers from 2u + offset.
inline GatherMap conv_map(const std::vector<Coord3>& in_coords, const std::vector<Coord3>& offsets, int stride) {
    if (stride != 1 && stride != 2) throw ConfigError("convolution stride must be 1 or 2");
    std::vector<Coord3> out = stride == 1 ? in_coords : downsample_coords(in_coords);
    return detail::gather_by_lookup(std::move(out), in_coords, offsets, stride);
}

// Map for convolution onto an explicit target coordinate set.
inline GatherMap target_map(const std::vector<Coord3>& in_coords, const std::vector<Coord3>& offsets,
                            std::vector<Coord3> target) {
    canonicalize(target);
    return detail::gather_by_lookup(std::move(target), in_coords, offsets, 1);
}

// Map for the stride-2 transposed convolution. Each parent c emits 2c + offset; outputs
// outside [0, limit) are dropped when a limit is given. Contributions to one output are
// kept in (parent, offset) order.
inline GatherMap transposed_map(const std::vector<Coord3>& in_coords, const std::vector<Coord3>& offsets,
                                std::optional<std::int32_t> limit) {
    struct Hit {
        Coord3 c;
        std::int32_t parent, k;
    };
    std::vector<Hit> hits;
    hits.reserve(in_coords.size() * offsets.size());
    for (std::size_t p = 0; p < in_coords.size(); ++p) {
        Coord3 base = twice(in_coords[p]);
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            Coord3 c = base + offsets[k];
            if (limit) {
                std::int32_t l = *limit;
                if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= l || c.y >= l || c.z >= l) continue;
            }
            hits.push_back({c, static_cast<std::int32_t>(p), static_cast<std::int32_t>(k)});
        }
    }
    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.c < b.c; });
    GatherMap m;
    m.in_count = in_coords.size();
    m.in_rows.reserve(hits.size());
    m.kernel_idx.reserve(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (i == 0 || !(hits[i].c == hits[i - 1].c)) {
            if (i > 0) m.row_ptr.push_back(static_cast<std::int32_t>(m.in_rows.size()));
            m.out_coords.push_back(hits[i].c);
        }
        m.in_rows.push_back(hits[i].parent);
        m.kernel_idx.push_back(hits[i].k);
    }
    if (!hits.empty()) m.row_ptr.push_back(static_cast<std::int32_t>(m.in_rows.size()));
    return m;
}

// Pairs of a map regrouped by kernel offset: for offset k, out_rows/in_rows in
// [ptr[k], ptr[k+1]), ascending output row within each group.
struct OffsetGroups {
    std::vector<std::int32_t> ptr;
    std::vector<std::int32_t> out_rows, in_rows;
};

inline OffsetGroups group_by_offset(const GatherMap& m, std::size_t offsets) {
    OffsetGroups g;
    g.ptr.assign(offsets + 1, 0);
    for (auto k : m.kernel_idx) ++g.ptr[static_cast<std::size_t>(k) + 1];
    for (std::size_t k = 0; k < offsets; ++k) g.ptr[k + 1] += g.ptr[k];
    g.out_rows.resize(m.in_rows.size());
    g.in_rows.resize(m.in_rows.size());
    std::vector<std::int32_t> fill(g.ptr.begin(), g.ptr.end() - 1);
    for (std::size_t r = 0; r < m.out_count(); ++r)
        for (std::int32_t p = m.row_ptr[r]; p < m.row_ptr[r + 1]; ++p) {
            const auto at = fill[static_cast<std::size_t>(m.kernel_idx[p])]++;
            g.out_rows[at] = static_cast<std::int32_t>(r);
            g.in_rows[at] = m.in_rows[p];
        }
    return g;
}

namespace detail {
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}  // namespace detail

// out[r] = bias + sum over pairs (i, k) of feats[i] * W_k. Evaluated one offset at a time
// as a dense product (gather rows, multiply, scatter-add), so the summation order is
// fixed by the map alone and never by the worker count.
template <class T>
std::vector<T> gather_forward(const GatherMap& m, std::span<const T> feats, const ConvKernel<T>& kernel) {
    const int cin = kernel.in_channels, cout = kernel.out_channels;
    std::vector<T> out(m.out_count() * static_cast<std::size_t>(cout), T(0));
    Eigen::Map<detail::RowMat<T>> O(out.data(), static_cast<Eigen::Index>(m.out_count()), cout);
    if (kernel.has_bias())
        for (std::size_t r = 0; r < m.out_count(); ++r)
            for (int co = 0; co < cout; ++co) out[r * cout + co] = kernel.bias[co];
    const auto g = group_by_offset(m, kernel.offsets.size());
    detail::RowMat<T> X, Y;
    for (std::size_t k = 0; k < kernel.offsets.size(); ++k) {
        const auto b = g.ptr[k], n = g.ptr[k + 1] - b;
        if (n == 0) continue;
        X.resize(n, cin);
        for (std::int32_t p = 0; p < n; ++p)
            std::copy_n(feats.data() + static_cast<std::size_t>(g.in_rows[b + p]) * cin, cin, X.row(p).data());
        Eigen::Map<const detail::RowMat<T>> W(kernel.weight(k), cin, cout);
        Y.noalias() = X * W;
        for (std::int32_t p = 0; p < n; ++p) O.row(g.out_rows[b + p]) += Y.row(p);
    }
    return out;
}

// Adjoint of gather_forward. grad_in, grad_w and grad_b are accumulated into (not
// overwritten); pass empty spans to skip a term.
template <class T>
void gather_backward(const GatherMap& m, std::span<const T> feats, const ConvKernel<T>& kernel,
                     std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_w, std::span<T> grad_b) {
    const int cin = kernel.in_channels, cout = kernel.out_channels;
    if (!grad_b.empty())
        for (std::size_t r = 0; r < m.out_count(); ++r)
            for (int co = 0; co < cout; ++co) grad_b[co] += grad_out[r * cout + co];
    if (grad_in.empty() && grad_w.empty()) return;
    const auto g = group_by_offset(m, kernel.offsets.size());
    detail::RowMat<T> X, G, GX;
    for (std::size_t k = 0; k < kernel.offsets.size(); ++k) {
        const auto b = g.ptr[k], n = g.ptr[k + 1] - b;
        if (n == 0) continue;
        G.resize(n, cout);
        for (std::int32_t p = 0; p < n; ++p)
            std::copy_n(grad_out.data() + static_cast<std::size_t>(g.out_rows[b + p]) * cout, cout, G.row(p).data());
        if (!grad_w.empty()) {
            X.resize(n, cin);
            for (std::int32_t p = 0; p < n; ++p)
                std::copy_n(feats.data() + static_cast<std::size_t>(g.in_rows[b + p]) * cin, cin, X.row(p).data());
            Eigen::Map<detail::RowMat<T>> GW(grad_w.data() + k * kernel.block(), cin, cout);
            GW.noalias() += X.transpose() * G;
        }
        if (!grad_in.empty()) {
            Eigen::Map<const detail::RowMat<T>> W(kernel.weight(k), cin, cout);
            GX.noalias() = G * W.transpose();
            for (std::int32_t p = 0; p < n; ++p) {
                T* gi = grad_in.data() + static_cast<std::size_t>(g.in_rows[b + p]) * cin;
                for (int ci = 0; ci < cin; ++ci) gi[ci] += GX(p, ci);
            }
        }
    }
}

namespace detail {
template <class T>
void check_channels(const SparseTensor<T>& in, const ConvKernel<T>& kernel) {
    kernel.validate();
    if (kernel.in_channels != in.channels)
        throw ConfigError("kernel expects " + std::to_string(kernel.in_channels) + " input channels, tensor has " +
                          std::to_string(in.channels));
}
}  // namespace detail

template <class T>
SparseTensor<T> sparse_conv(const SparseTensor<T>& in, const ConvKernel<T>& kernel) {
    detail::check_channels(in, kernel);
    GatherMap m = conv_map(in.coords, kernel.offsets, kernel.stride);
    auto f = gather_forward<T>(m, in.feats, kernel);
    return SparseTensor<T>(std::move(m.out_coords), std::move(f), kernel.out_channels,
                           in.scale + (kernel.stride == 2 ? 1 : 0));
}

// Stride-2 generative upsampling. `limit` is the exclusive upper bound of valid
// coordinates at the output scale (2^(p - scale + 1) for a precision-p cloud).
template <class T>
SparseTensor<T> transposed_conv(const SparseTensor<T>& in, const ConvKernel<T>& kernel,
                                std::optional<std::int32_t> limit = std::nullopt) {
    detail::check_channels(in, kernel);
    if (kernel.stride != 2) throw ConfigError("transposed convolution requires stride 2");
    GatherMap m = transposed_map(in.coords, kernel.offsets, limit);
    auto f = gather_forward<T>(m, in.feats, kernel);
    return SparseTensor<T>(std::move(m.out_coords), std::move(f), kernel.out_channels, std::max(0, in.scale - 1));
}

template <class T>
SparseTensor<T> conv_on_coords(const SparseTensor<T>& in, const ConvKernel<T>& kernel, std::vector<Coord3> target) {
    detail::check_channels(in, kernel);
    if (kernel.stride != 1) throw ConfigError("convolution on target coordinates requires stride 1");
    GatherMap m = target_map(in.coords, kernel.offsets, std::move(target));
    auto f = gather_forward<T>(m, in.feats, kernel);
    return SparseTensor<T>(std::move(m.out_coords), std::move(f), kernel.out_channels, in.scale);
}

// Row indices (ascending) of the k highest logits; ties go to the smaller coordinate,
// which for a canonical tensor is the smaller row index.
template <class T>
std::vector<std::int32_t> topk_rows(std::span<const T> logits, std::size_t k) {
    std::vector<std::int32_t> rows(logits.size());
    std::iota(rows.begin(), rows.end(), 0);
    if (k >= rows.size()) return rows;
    auto better = [&](std::int32_t a, std::int32_t b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    };
    std::nth_element(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end(), better);
    rows.resize(k);
    std::sort(rows.begin(), rows.end());
    return rows;
}

template <class T>
SparseTensor<T> select_rows(const SparseTensor<T>& t, std::span<const std::int32_t> rows) {
    SparseTensor<T> out;
    out.channels = t.channels;
    out.scale = t.scale;
    out.coords.reserve(rows.size());
    out.feats.reserve(rows.size() * static_cast<std::size_t>(t.channels));
    for (auto r : rows) {
        out.coords.push_back(t.coords[r]);
        out.feats.insert(out.feats.end(), t.row(r), t.row(r) + t.channels);
    }
    return out;
}

template <class T>
SparseTensor<T> prune_topk(const SparseTensor<T>& t, std::span<const T> logits, std::size_t k) {
    if (logits.size() != t.size()) throw ContractError("logit count does not match coordinate count");
    auto rows = topk_rows(logits, k);
    return select_rows(t, rows);
}

// Row mapping of a coordinate-set union: for each output row, the row in a and in b (or -1).
struct UnionMap {
    std::vector<Coord3> coords;
    std::vector<std::int32_t> a_rows, b_rows;
};

inline UnionMap union_map(const std::vector<Coord3>& a, const std::vector<Coord3>& b) {
    UnionMap u;
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
        if (j == b.size() || (i < a.size() && a[i] < b[j])) {
            u.coords.push_back(a[i]);
            u.a_rows.push_back(static_cast<std::int32_t>(i++));
            u.b_rows.push_back(-1);
        } else if (i == a.size() || b[j] < a[i]) {
            u.coords.push_back(b[j]);
            u.a_rows.push_back(-1);
            u.b_rows.push_back(static_cast<std::int32_t>(j++));
        } else {
            u.coords.push_back(a[i]);
            u.a_rows.push_back(static_cast<std::int32_t>(i++));
            u.b_rows.push_back(static_cast<std::int32_t>(j++));
        }
    }
    return u;
}

template <class T>
SparseTensor<T> concat_features(const SparseTensor<T>& primary, const SparseTensor<T>& auxiliary) {
    if (primary.scale != auxiliary.scale) throw ConfigError("concatenation requires tensors at the same scale");
    UnionMap u = union_map(primary.coords, auxiliary.coords);
    const int ca = primary.channels, cb = auxiliary.channels;
    SparseTensor<T> out(std::move(u.coords), ca + cb, primary.scale);
    for (std::size_t r = 0; r < out.size(); ++r) {
        T* o = out.row(r);
        if (u.a_rows[r] >= 0) std::copy_n(primary.row(u.a_rows[r]), ca, o);
        if (u.b_rows[r] >= 0) std::copy_n(auxiliary.row(u.b_rows[r]), cb, o + ca);
    }
    return out;
}

}  // namespace pgpc
