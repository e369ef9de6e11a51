#pragma once

#include <optional>
#include <type_traits>
#include <vector>

#include "pgpc/geometry/point_cloud.hpp"
#include "pgpc/network/weights.hpp"
#include "pgpc/training/graph.hpp"

namespace pgpc {

// Sub-networks recorded on a Graph. Passing a gradient accumulator `g` (same layout as
// the weights) routes kernel gradients there; nullptr skips them. The same code serves
// inference (untracked graph) and training, so both see bit-identical forward values.

template <class T>
using NodeId = typename Graph<T>::Id;

namespace detail {

template <class T>
ConvKernel<T>* grad_layer(std::type_identity_t<NetworkWeights<T>>* g, const std::string& name) {
    return g ? &g->layer(name) : nullptr;
}

template <class T>
NodeId<T> conv_layer(Graph<T>& G, NodeId<T> x, const NetworkWeights<T>& w, std::type_identity_t<NetworkWeights<T>>* g,
                     const std::string& name) {
    return G.conv(x, w.layer(name), grad_layer<T>(g, name));
}

}  // namespace detail

// Two half-width branches (3-3 and 1-3-1), concatenated and added to the input.
template <class T>
NodeId<T> vrn_unit(Graph<T>& G, NodeId<T> x, const NetworkWeights<T>& w, std::type_identity_t<NetworkWeights<T>>* g,
                   const std::string& prefix) {
    if (G.value(x).channels % 2) throw ConfigError("VRN unit needs an even channel count");
    auto step = [&](NodeId<T> v, const char* part) { return G.relu(detail::conv_layer(G, v, w, g, prefix + part)); };
    const NodeId<T> a = step(step(x, ".a1"), ".a2");
    const NodeId<T> b = step(step(step(x, ".b1"), ".b2"), ".b3");
    return G.add(x, G.concat(a, b));
}

struct StackIds {
    std::vector<int> scales;          // node per scale 1..L (index 0 is scale 1)
    std::vector<std::size_t> counts;  // N^0..N^L of the input voxel set
};

// Encoder trunk. `coords` is a voxelized cloud (any order); its features are ones.
template <class T>
StackIds extract_features(Graph<T>& G, std::vector<Coord3> coords, const NetworkWeights<T>& w,
                          std::type_identity_t<NetworkWeights<T>>* g = nullptr) {
    if (coords.empty()) throw DegenerateInputError("cannot extract features from an empty cloud");
    canonicalize(coords);
    const auto& cfg = w.config;
    StackIds s;
    s.counts.push_back(coords.size());
    std::vector<T> ones(coords.size(), T(1));
    NodeId<T> x = G.constant(SparseTensor<T>(std::move(coords), std::move(ones), 1, 0));
    for (int l = 1; l <= cfg.scales; ++l) {
        x = G.relu(detail::conv_layer(G, x, w, g, layer_name("extract", l, "down")));
        if (cfg.vrn) x = vrn_unit(G, x, w, g, layer_name("extract", l, "vrn"));
        x = detail::conv_layer(G, x, w, g, layer_name("extract", l, "out"));
        if (l < cfg.scales) x = G.relu(x);
        s.scales.push_back(x);
        s.counts.push_back(G.value(x).size());
    }
    return s;
}

// Hierarchical fusion of the aligned stack, finished by a convolution onto the source's
// scale-L coordinates.
template <class T>
NodeId<T> warp_features(Graph<T>& G, const StackIds& aligned, std::vector<Coord3> target,
                        const NetworkWeights<T>& w, std::type_identity_t<NetworkWeights<T>>* g = nullptr) {
    const auto& cfg = w.config;
    if (aligned.scales.size() != static_cast<std::size_t>(cfg.scales))
        throw ConfigError("aligned stack has " + std::to_string(aligned.scales.size()) + " scales, network expects " +
                          std::to_string(cfg.scales));
    NodeId<T> x = aligned.scales[0];
    for (int l = 2; l <= cfg.scales; ++l) {
        const NodeId<T> aux = G.relu(detail::conv_layer(G, x, w, g, layer_name("warp", l, "down")));
        x = G.concat(aligned.scales[static_cast<std::size_t>(l - 1)], aux);
    }
    return G.conv_on(x, w.layer("warp.final"), detail::grad_layer<T>(g, "warp.final"), std::move(target));
}

struct PropagateIds {
    std::vector<int> logits;  // per block, output scale L-1 first; rows = pre-pruning candidates
    std::vector<Coord3> decoded;
    bool clamped = false;  // some requested count exceeded its candidate set
};

// Decoder. counts[i] is the point budget of the i-th block (scales L-1 .. 0). With
// `precision`, candidates outside the lattice are dropped. `truth` (per output scale,
// index = scale) turns on training mode: ground-truth candidates are kept in addition to
// the top-K so deeper blocks see the right support.
template <class T>
PropagateIds propagate(Graph<T>& G, NodeId<T> latent, std::span<const std::size_t> counts,
                       const NetworkWeights<T>& w, std::type_identity_t<NetworkWeights<T>>* g = nullptr,
                       std::optional<int> precision = std::nullopt,
                       const std::vector<CoordIndex>* truth = nullptr) {
    const auto& cfg = w.config;
    if (counts.size() != static_cast<std::size_t>(cfg.scales))
        throw ConfigError("propagate needs one count per scale");
    PropagateIds out;
    NodeId<T> x = latent;
    for (int s = cfg.scales - 1, i = 0; s >= 0; --s, ++i) {
        std::optional<std::int32_t> limit;
        if (precision) limit = static_cast<std::int32_t>(1) << std::max(0, *precision - s);
        const std::string up = layer_name("propagate", s, "up");
        x = G.relu(G.transposed(x, w.layer(up), detail::grad_layer<T>(g, up), limit));
        if (cfg.vrn) x = vrn_unit(G, x, w, g, layer_name("propagate", s, "vrn"));
        const NodeId<T> z = detail::conv_layer(G, x, w, g, layer_name("propagate", s, "logit"));
        out.logits.push_back(z);
        const auto& cand = G.value(z);
        std::size_t k = counts[static_cast<std::size_t>(i)];
        if (k > cand.size()) {
            out.clamped = true;
            k = cand.size();
        }
        std::vector<std::int32_t> rows = topk_rows<T>(cand.feats, k);
        if (truth) {
            const auto& t = (*truth)[static_cast<std::size_t>(s)];
            std::vector<char> keep(cand.size(), 0);
            for (auto r : rows) keep[static_cast<std::size_t>(r)] = 1;
            rows.clear();
            for (std::size_t r = 0; r < cand.size(); ++r)
                if (keep[r] || t.count(cand.coords[r])) rows.push_back(static_cast<std::int32_t>(r));
        }
        x = G.select(x, std::move(rows));
    }
    out.decoded = G.value(x).coords;
    return out;
}

// Plain-tensor conveniences over an untracked graph.

template <class T>
struct ScaleStack {
    std::vector<SparseTensor<T>> scales;  // scale 1..L
    std::vector<std::size_t> counts;      // N^0..N^L
};

template <class T>
ScaleStack<T> extract_features(const std::vector<Coord3>& coords, const NetworkWeights<T>& w) {
    Graph<T> G(false);
    auto ids = extract_features(G, coords, w);
    ScaleStack<T> s;
    for (auto id : ids.scales) s.scales.push_back(G.value(id));
    s.counts = ids.counts;
    return s;
}

template <class T>
SparseTensor<T> warp_features(const ScaleStack<T>& aligned, std::vector<Coord3> target, const NetworkWeights<T>& w) {
    Graph<T> G(false);
    StackIds ids;
    for (const auto& t : aligned.scales) ids.scales.push_back(G.constant(t));
    return G.value(warp_features(G, ids, std::move(target), w));
}

template <class T>
SparseTensor<T> residual(const SparseTensor<T>& source, const SparseTensor<T>& warped) {
    if (source.coords != warped.coords) throw ContractError("residual needs identical coordinate sets");
    if (source.channels != warped.channels) throw ContractError("residual needs identical channel counts");
    SparseTensor<T> d = source;
    for (std::size_t i = 0; i < d.feats.size(); ++i) d.feats[i] -= warped.feats[i];
    return d;
}

template <class T>
SparseTensor<T> add_residual(const SparseTensor<T>& warped, const SparseTensor<T>& delta) {
    if (warped.coords != delta.coords) throw ContractError("residual needs identical coordinate sets");
    if (warped.channels != delta.channels) throw ContractError("residual needs identical channel counts");
    SparseTensor<T> s = warped;
    for (std::size_t i = 0; i < s.feats.size(); ++i) s.feats[i] += delta.feats[i];
    return s;
}

template <class T>
struct Propagated {
    std::vector<Coord3> coords;
    std::vector<SparseTensor<T>> logits;  // per block, scale L-1 first
    bool clamped = false;
};

template <class T>
Propagated<T> propagate(const SparseTensor<T>& latent, std::span<const std::size_t> counts,
                        const NetworkWeights<T>& w, std::optional<int> precision = std::nullopt) {
    Graph<T> G(false);
    auto ids = propagate(G, G.constant(latent), counts, w, nullptr, precision);
    Propagated<T> p;
    p.coords = std::move(ids.decoded);
    for (auto id : ids.logits) p.logits.push_back(G.value(id));
    p.clamped = ids.clamped;
    return p;
}

}  // namespace pgpc
