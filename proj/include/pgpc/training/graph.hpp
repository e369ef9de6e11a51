#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pgpc/entropy/factorized.hpp"
#include "pgpc/entropy/feature_coder.hpp"
#include "pgpc/sparse/ops.hpp"

namespace pgpc {

// Reverse-mode tape over sparse tensors. Every node stores its forward value; tracked
// graphs also keep an adjoint closure per node. Gradients of parameters are accumulated
// into caller-owned buffers (ConvKernel-shaped or plain spans), so one tape can feed
// several optimisers. Scalars are one-row, one-channel tensors at the origin.
template <class T>
class Graph {
public:
    using Id = int;
    using Backward = std::function<void(Graph&, Id)>;

    explicit Graph(bool track = true) : track_(track) {}

    bool tracking() const { return track_; }
    std::size_t size() const { return nodes_.size(); }
    const SparseTensor<T>& value(Id id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    const std::string& op(Id id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
    T scalar(Id id) const { return value(id).feats.at(0); }
    std::span<const T> grad(Id id) const { return nodes_.at(static_cast<std::size_t>(id)).grad; }

    // Leaf. When `sink` is non-empty the leaf's gradient is accumulated into it.
    Id input(SparseTensor<T> t, std::span<T> sink = {}) {
        if (!sink.empty() && sink.size() != t.feats.size()) throw ContractError("gradient sink size mismatch");
        if (sink.empty()) return push("input", std::move(t), {}, true);
        return push("input", std::move(t), [sink](Graph& g, Id self) {
            const auto& gr = g.node(self).grad;
            for (std::size_t i = 0; i < gr.size(); ++i) sink[i] += gr[i];
        });
    }

    Id constant(SparseTensor<T> t) { return push("constant", std::move(t), {}, true); }

    Id scalar_input(T v, std::span<T> sink = {}) { return input(scalar_tensor(v), sink); }

    // Registers an op by name. Tracked graphs reject ops without an adjoint.
    Id record(std::string name, SparseTensor<T> value, Backward backward) {
        if (track_ && !backward) throw ContractError("operation '" + name + "' has no registered adjoint");
        return push(std::move(name), std::move(value), std::move(backward));
    }

    Id conv(Id x, const ConvKernel<T>& k, ConvKernel<T>* gk = nullptr) {
        detail::check_channels(value(x), k);
        auto m = std::make_shared<GatherMap>(conv_map(value(x).coords, k.offsets, k.stride));
        return gathered("sparse_conv", x, k, gk, m, value(x).scale + (k.stride == 2 ? 1 : 0));
    }

    Id transposed(Id x, const ConvKernel<T>& k, ConvKernel<T>* gk = nullptr,
                  std::optional<std::int32_t> limit = std::nullopt) {
        detail::check_channels(value(x), k);
        if (k.stride != 2) throw ConfigError("transposed convolution requires stride 2");
        auto m = std::make_shared<GatherMap>(transposed_map(value(x).coords, k.offsets, limit));
        return gathered("transposed_conv", x, k, gk, m, std::max(0, value(x).scale - 1));
    }

    Id conv_on(Id x, const ConvKernel<T>& k, ConvKernel<T>* gk, std::vector<Coord3> target) {
        detail::check_channels(value(x), k);
        if (k.stride != 1) throw ConfigError("convolution on target coordinates requires stride 1");
        auto m = std::make_shared<GatherMap>(target_map(value(x).coords, k.offsets, std::move(target)));
        return gathered("conv_on_coords", x, k, gk, m, value(x).scale);
    }

    Id relu(Id x) {
        SparseTensor<T> out = value(x);
        for (auto& v : out.feats) v = v > T(0) ? v : T(0);
        return record("relu", std::move(out), [x](Graph& g, Id self) {
            const auto& in = g.value(x).feats;
            const auto& gr = g.node(self).grad;
            auto& gx = g.grad_of(x);
            for (std::size_t i = 0; i < gr.size(); ++i)
                if (in[i] > T(0)) gx[i] += gr[i];
        });
    }

    // Elementwise a + sign * b on identical coordinate sets.
    Id add(Id a, Id b) { return combine("add", a, b, T(1)); }
    Id sub(Id a, Id b) { return combine("sub", a, b, T(-1)); }

    Id concat(Id primary, Id auxiliary) {
        const auto& pa = value(primary);
        const auto& pb = value(auxiliary);
        if (pa.scale != pb.scale) throw ConfigError("concatenation requires tensors at the same scale");
        auto u = std::make_shared<UnionMap>(union_map(pa.coords, pb.coords));
        SparseTensor<T> out = concat_features(pa, pb);
        return record("concat", std::move(out), [primary, auxiliary, u](Graph& g, Id self) {
            const int ca = g.value(primary).channels, cb = g.value(auxiliary).channels, c = ca + cb;
            const auto& gr = g.node(self).grad;
            auto& ga = g.grad_of(primary);
            auto& gb = g.grad_of(auxiliary);
            for (std::size_t r = 0; r < u->coords.size(); ++r) {
                const T* s = gr.data() + r * c;
                if (u->a_rows[r] >= 0)
                    for (int k = 0; k < ca; ++k) ga[static_cast<std::size_t>(u->a_rows[r]) * ca + k] += s[k];
                if (u->b_rows[r] >= 0)
                    for (int k = 0; k < cb; ++k) gb[static_cast<std::size_t>(u->b_rows[r]) * cb + k] += s[ca + k];
            }
        });
    }

    // Row gather (pruning). Rows must be valid indices of x.
    Id select(Id x, std::vector<std::int32_t> rows) {
        auto r = std::make_shared<std::vector<std::int32_t>>(std::move(rows));
        SparseTensor<T> out = select_rows(value(x), *r);
        return record("select", std::move(out), [x, r](Graph& g, Id self) {
            const int c = g.value(x).channels;
            const auto& gr = g.node(self).grad;
            auto& gx = g.grad_of(x);
            for (std::size_t i = 0; i < r->size(); ++i)
                for (int k = 0; k < c; ++k) gx[static_cast<std::size_t>((*r)[i]) * c + k] += gr[i * c + k];
        });
    }

    // Quantizer. Train mode adds U(-0.5, 0.5) noise with an identity adjoint; infer mode
    // rounds and is not differentiable, so a tracked graph refuses it.
    template <class Engine>
    Id quantize(Id x, QuantMode mode, Engine& rng) {
        if (mode == QuantMode::infer) {
            if (track_) throw ContractError("rounding quantizer cannot be recorded in a differentiable graph");
            SparseTensor<T> out = value(x);
            out.feats = round_features<T>(out.feats);
            return push("round", std::move(out), {}, true);
        }
        SparseTensor<T> out = value(x);
        out.feats = quantize_features<T>(out.feats, QuantMode::train, rng);
        return record("noise_quantize", std::move(out), [x](Graph& g, Id self) {
            const auto& gr = g.node(self).grad;
            auto& gx = g.grad_of(x);
            for (std::size_t i = 0; i < gr.size(); ++i) gx[i] += gr[i];
        });
    }

    // Mean binary cross-entropy of sigmoid(logits) against 0/1 labels, natural log,
    // probabilities clamped to [1e-7, 1 - 1e-7]. Empty input gives 0.
    Id bce(Id logits, std::vector<T> labels) {
        const auto& z = value(logits).feats;
        if (value(logits).channels != 1 || labels.size() != z.size())
            throw ContractError("label count does not match candidate count");
        const T lo = T(1e-7), hi = T(1) - T(1e-7);
        double sum = 0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const T p = std::clamp(sigmoid(z[i]), lo, hi);
            sum += labels[i] > T(0.5) ? -std::log(static_cast<double>(p)) : -std::log(1.0 - static_cast<double>(p));
        }
        const T d = z.empty() ? T(0) : static_cast<T>(sum / static_cast<double>(z.size()));
        auto lab = std::make_shared<std::vector<T>>(std::move(labels));
        return record("bce", scalar_tensor(d), [logits, lab, lo, hi](Graph& g, Id self) {
            const auto& z = g.value(logits).feats;
            if (z.empty()) return;
            const T up = g.node(self).grad[0] / static_cast<T>(z.size());
            auto& gz = g.grad_of(logits);
            for (std::size_t i = 0; i < z.size(); ++i) {
                const T p = sigmoid(z[i]);
                if (p < lo || p > hi) continue;  // clamp is flat here
                gz[i] += up * (p - (*lab)[i]);
            }
        });
    }

    // Self-information of y under a density (normally the factorized model), in bits,
    // divided by `divisor` (the input point count, giving bits per point). Density
    // gradients go to grad_params. The density must outlive the graph.
    template <class Density>
    Id rate(Id y, const Density& model, std::span<T> grad_params, T divisor) {
        const auto& v = value(y);
        if (v.channels != model.channels) throw ConfigError("residual channels do not match the entropy model");
        if (!(divisor > T(0))) throw ContractError("rate divisor must be positive");
        const T r = model.bits(v.feats) / divisor;
        return record("rate", scalar_tensor(r), [y, &model, grad_params, divisor](Graph& g, Id self) {
            const auto& yv = g.value(y).feats;
            std::vector<T> gy(yv.size(), T(0));
            model.bits(yv, g.node(self).grad[0] / divisor, gy, grad_params);
            auto& gx = g.grad_of(y);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
        });
    }

    // sum_i coef_i * s_i over scalar nodes.
    Id weighted_sum(std::vector<Id> terms, std::vector<T> coefs) {
        if (terms.size() != coefs.size()) throw ContractError("weighted sum needs one coefficient per term");
        T s = T(0);
        for (std::size_t i = 0; i < terms.size(); ++i) s += coefs[i] * scalar(terms[i]);
        auto tv = std::make_shared<std::vector<Id>>(std::move(terms));
        auto cv = std::make_shared<std::vector<T>>(std::move(coefs));
        return record("weighted_sum", scalar_tensor(s), [tv, cv](Graph& g, Id self) {
            const T up = g.node(self).grad[0];
            for (std::size_t i = 0; i < tv->size(); ++i) g.grad_of((*tv)[i])[0] += (*cv)[i] * up;
        });
    }

    // Product of two scalar nodes.
    Id mul(Id a, Id b) {
        return record("mul", scalar_tensor(scalar(a) * scalar(b)), [a, b](Graph& g, Id self) {
            const T up = g.node(self).grad[0];
            g.grad_of(a)[0] += up * g.scalar(b);
            g.grad_of(b)[0] += up * g.scalar(a);
        });
    }

    // Sum of all features of x (test helper that turns any tensor into a scalar loss).
    Id sum(Id x) {
        T s = T(0);
        for (auto v : value(x).feats) s += v;
        return record("sum", scalar_tensor(s), [x](Graph& g, Id self) {
            const T up = g.node(self).grad[0];
            for (auto& v : g.grad_of(x)) v += up;
        });
    }

    // Runs adjoints from `root` (a scalar) back to the leaves.
    void backward(Id root) {
        if (!track_) throw ContractError("backward on an untracked graph");
        if (value(root).feats.size() != 1) throw ContractError("backward needs a scalar root");
        for (auto& n : nodes_) n.grad.assign(n.value.feats.size(), T(0));
        nodes_[static_cast<std::size_t>(root)].grad[0] = T(1);
        for (Id i = root; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (n.backward) n.backward(*this, i);
        }
    }

    static SparseTensor<T> scalar_tensor(T v) { return SparseTensor<T>({Coord3{0, 0, 0}}, {v}, 1, 0); }

    static T sigmoid(T x) { return FactorizedModel<T>::sigmoid(x); }

private:
    struct Node {
        std::string op;
        SparseTensor<T> value;
        Backward backward;
        std::vector<T> grad;
    };

    Node& node(Id id) { return nodes_[static_cast<std::size_t>(id)]; }
    std::vector<T>& grad_of(Id id) { return nodes_[static_cast<std::size_t>(id)].grad; }

    Id push(std::string op, SparseTensor<T> value, Backward backward, bool leaf = false) {
        (void)leaf;
        nodes_.push_back(Node{std::move(op), std::move(value), track_ ? std::move(backward) : Backward{}, {}});
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id gathered(const char* name, Id x, const ConvKernel<T>& k, ConvKernel<T>* gk, std::shared_ptr<GatherMap> m,
                int scale) {
        auto f = gather_forward<T>(*m, value(x).feats, k);
        SparseTensor<T> out(m->out_coords, std::move(f), k.out_channels, scale);
        return record(name, std::move(out), [x, &k, gk, m](Graph& g, Id self) {
            std::span<T> gw, gb;
            if (gk) {
                gw = gk->weights;
                if (k.has_bias()) gb = gk->bias;
            }
            gather_backward<T>(*m, g.value(x).feats, k, g.node(self).grad, g.grad_of(x), gw, gb);
        });
    }

    Id combine(const char* name, Id a, Id b, T sign) {
        const auto& va = value(a);
        const auto& vb = value(b);
        if (va.coords != vb.coords) throw ContractError(std::string(name) + ": coordinate sets differ");
        if (va.channels != vb.channels) throw ContractError(std::string(name) + ": channel counts differ");
        SparseTensor<T> out = va;
        for (std::size_t i = 0; i < out.feats.size(); ++i) out.feats[i] += sign * vb.feats[i];
        return record(name, std::move(out), [a, b, sign](Graph& g, Id self) {
            const auto& gr = g.node(self).grad;
            auto& ga = g.grad_of(a);
            auto& gb = g.grad_of(b);
            for (std::size_t i = 0; i < gr.size(); ++i) {
                ga[i] += gr[i];
                gb[i] += sign * gr[i];
            }
        });
    }

    bool track_;
    std::deque<Node> nodes_;  // stable references across appends
};

// A parameter block for grad_check: current values and the buffer its gradient lands in.
struct ParamRef {
    std::span<double> value;
    std::span<double> grad;
};

// Compares tape gradients with central finite differences. `build` must record the loss
// from the current parameter values and return its id; it is re-run for every probe. At
// most `max_probes` coordinates per block are probed (evenly spaced). Returns the largest
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double grad_check(const std::function<Graph<double>::Id(Graph<double>&)>& build, std::vector<ParamRef> params,
                         double h = 1e-4, std::size_t max_probes = 64, double floor = 1e-6) {
    for (auto& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    {
        Graph<double> g(true);
        g.backward(build(g));
    }
    auto eval = [&] {
        Graph<double> g(false);
        return g.scalar(build(g));
    };
    double worst = 0;
    for (auto& p : params) {
        const std::size_t n = p.value.size();
        const std::size_t step = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_probes));
        for (std::size_t i = 0; i < n; i += step) {
            const double x = p.value[i];
            p.value[i] = x + h;
            const double up = eval();
            p.value[i] = x - h;
            const double dn = eval();
            p.value[i] = x;
            const double num = (up - dn) / (2 * h), ana = p.grad[i];
            const double den = std::max({std::abs(num), std::abs(ana), floor});
            worst = std::max(worst, std::abs(num - ana) / den);
        }
    }
    return worst;
}

}  // namespace pgpc
