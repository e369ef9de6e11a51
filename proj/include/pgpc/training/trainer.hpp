#pragma once

#include <filesystem>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "pgpc/network/network.hpp"
#include "pgpc/training/dataset.hpp"

namespace pgpc {

struct LossBreakdown {
    double lambda = 0;
    double R = 0;  // bits per input point
    double D = 0;  // summed multiscale BCE (nats)
    double total = 0;
};

struct TrainConfig {
    std::vector<double> lambdas{0.2, 0.5, 1.1, 2.5, 6, 9, 13};
    double lr = 16e-4;
    double lr_final = 0.25;      // lr decays geometrically to lr * lr_final over each run
    double weight_decay = 1e-4;  // L2 on network weights (not on the density parameters)
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double entropy_lr_scale = 3;  // density parameters learn this much faster
    int pretrain_epochs = 8;  // shared run at the smallest lambda, from scratch
    int epochs = 6;           // per-lambda fine-tuning from the shared snapshot
    int batch_size = 1;
    std::uint64_t seed = 1;
    bool use_prior = true;
    NetworkConfig network;

    void validate() const {
        if (lambdas.empty()) throw ConfigError("training needs at least one lambda");
        for (double l : lambdas)
            if (!(l > 0)) throw ConfigError("lambda must be positive");
        if (!(lr > 0)) throw ConfigError("learning rate must be positive");
        if (!(entropy_lr_scale > 0)) throw ConfigError("entropy_lr_scale must be positive");
        if (!(lr_final > 0) || lr_final > 1) throw ConfigError("lr_final must be in (0, 1]");
        if (weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
        if (epochs < 0 || pretrain_epochs < 0) throw ConfigError("epoch counts must be nonnegative");
        if (batch_size < 1) throw ConfigError("batch size must be positive");
        network.validate();
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        try {
            c.lambdas = j.value("lambdas", c.lambdas);
            c.lr = j.value("lr", c.lr);
            c.lr_final = j.value("lr_final", c.lr_final);
            c.weight_decay = j.value("weight_decay", c.weight_decay);
            c.entropy_lr_scale = j.value("entropy_lr_scale", c.entropy_lr_scale);
            c.epochs = j.value("epochs", c.epochs);
            c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
            c.batch_size = j.value("batch_size", c.batch_size);
            c.seed = j.value("seed", c.seed);
            c.use_prior = j.value("use_prior", c.use_prior);
            if (j.contains("network")) c.network = NetworkConfig::from_json(j["network"]);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad training config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

template <class T>
struct LossIds {
    NodeId<T> R, D, total;
};

// Per-scale occupancy sets of a canonical voxel set: index s holds scale s.
inline std::vector<CoordIndex> occupancy_pyramid(std::vector<Coord3> coords, int scales) {
    std::vector<CoordIndex> out;
    for (int s = 0; s < scales; ++s) {
        out.push_back(make_index(coords));
        coords = downsample_coords(coords);
    }
    return out;
}

// Records total = lambda * R + D for one sample. `grad` (same layout as the model)
// receives kernel and density gradients; `lambda` is a scalar node.
template <class T, class Engine>
LossIds<T> loss_graph(Graph<T>& G, const TrainSample& s, const Model<T>& m, Model<T>* grad, NodeId<T> lambda,
                      Engine& rng, bool use_prior) {
    const auto& w = m.net;
    NetworkWeights<T>* gw = grad ? &grad->net : nullptr;
    const int L = w.config.scales;
    const StackIds src = extract_features(G, s.source, w, gw);
    const NodeId<T> fs = src.scales.back();
    const std::vector<Coord3> target = G.value(fs).coords;
    NodeId<T> warped;
    if (use_prior && !s.aligned.empty()) {
        const StackIds al = extract_features(G, s.aligned, w, gw);
        warped = warp_features(G, al, target, w, gw);
    } else {
        warped = G.constant(SparseTensor<T>(target, w.config.latent_channels, L));
    }
    const NodeId<T> delta = G.quantize(G.sub(fs, warped), QuantMode::train, rng);
    std::span<T> gem = grad ? std::span<T>(grad->entropy.params) : std::span<T>{};
    const NodeId<T> R = G.rate(delta, m.entropy, gem, static_cast<T>(s.source.size()));
    const NodeId<T> latent = G.add(warped, delta);

    const auto truth = occupancy_pyramid(s.source, L);
    std::vector<std::size_t> counts;
    for (int sc = L - 1; sc >= 0; --sc) counts.push_back(src.counts[static_cast<std::size_t>(sc)]);
    const auto prop = propagate(G, latent, counts, w, gw, s.precision, &truth);
    std::vector<NodeId<T>> terms;
    for (std::size_t i = 0; i < prop.logits.size(); ++i) {
        const int sc = L - 1 - static_cast<int>(i);
        const auto& cand = G.value(prop.logits[i]).coords;
        std::vector<T> labels(cand.size());
        for (std::size_t r = 0; r < cand.size(); ++r)
            labels[r] = truth[static_cast<std::size_t>(sc)].count(cand[r]) ? T(1) : T(0);
        terms.push_back(G.bce(prop.logits[i], std::move(labels)));
    }
    const NodeId<T> D = G.weighted_sum(terms, std::vector<T>(terms.size(), T(1)));
    const NodeId<T> total = G.weighted_sum({G.mul(lambda, R), D}, {T(1), T(1)});
    return {R, D, total};
}

// Adam with L2 weight decay folded into the gradient (decay applies to network weights
// and biases, not to the entropy model).
template <class T>
class Adam {
public:
    Adam(const Model<T>& m, const TrainConfig& cfg) : cfg_(cfg) {
        for (const auto& k : m.net.layers) {
            m_.emplace_back(k.weights.size(), 0.0);
            m_.emplace_back(k.bias.size(), 0.0);
        }
        m_.emplace_back(m.entropy.params.size(), 0.0);
        v_ = m_;
    }

    void step(Model<T>& m, const Model<T>& g, double lr) {
        ++t_;
        const double c1 = 1 - std::pow(cfg_.beta1, t_), c2 = 1 - std::pow(cfg_.beta2, t_);
        std::size_t slot = 0;
        auto update = [&](std::vector<T>& x, const std::vector<T>& gx, double decay, double rate) {
            auto& mm = m_[slot];
            auto& vv = v_[slot];
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double gi = static_cast<double>(gx[i]) + decay * static_cast<double>(x[i]);
                mm[i] = cfg_.beta1 * mm[i] + (1 - cfg_.beta1) * gi;
                vv[i] = cfg_.beta2 * vv[i] + (1 - cfg_.beta2) * gi * gi;
                x[i] -= static_cast<T>(rate * (mm[i] / c1) / (std::sqrt(vv[i] / c2) + cfg_.eps));
            }
            ++slot;
        };
        for (std::size_t l = 0; l < m.net.layers.size(); ++l) {
            update(m.net.layers[l].weights, g.net.layers[l].weights, cfg_.weight_decay, lr);
            update(m.net.layers[l].bias, g.net.layers[l].bias, cfg_.weight_decay, lr);
        }
        update(m.entropy.params, g.entropy.params, 0.0, lr * cfg_.entropy_lr_scale);
    }

private:
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

template <class T>
Model<T> zero_grad_like(const Model<T>& m) {
    Model<T> g;
    g.net = m.net.zeros_like();
    g.entropy = m.entropy;
    std::fill(g.entropy.params.begin(), g.entropy.params.end(), T(0));
    return g;
}

template <class T>
bool all_finite(const Model<T>& g) {
    for (const auto& k : g.net.layers) {
        for (T v : k.weights)
            if (!std::isfinite(static_cast<double>(v))) return false;
        for (T v : k.bias)
            if (!std::isfinite(static_cast<double>(v))) return false;
    }
    for (T v : g.entropy.params)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

// Residual of one sample in inference mode (rounded), row-major latent_channels wide.
template <class T>
std::vector<T> inference_residual(const TrainSample& s, const Model<T>& m, bool use_prior) {
    Graph<T> G(false);
    const StackIds src = extract_features(G, s.source, m.net);
    const NodeId<T> fs = src.scales.back();
    std::vector<T> d = G.value(fs).feats;
    if (use_prior && !s.aligned.empty()) {
        const StackIds al = extract_features(G, s.aligned, m.net);
        const auto& wf = G.value(warp_features(G, al, G.value(fs).coords, m.net));
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= wf.feats[i];
    }
    return round_features<T>(d);
}

// Sets each channel's coding range to the observed residual range plus a margin.
template <class T>
void calibrate_ranges(Model<T>& m, const std::vector<TrainSample>& data, bool use_prior, std::int32_t margin = 4) {
    const int C = m.entropy.channels;
    std::vector<std::int32_t> lo(C, 0), hi(C, 0);
    for (const auto& s : data) {
        const auto d = inference_residual(s, m, use_prior);
        for (std::size_t i = 0; i < d.size(); ++i) {
            const int c = static_cast<int>(i % static_cast<std::size_t>(C));
            const auto v = static_cast<std::int32_t>(std::clamp<double>(d[i], -4096, 4096));
            lo[c] = std::min(lo[c], v);
            hi[c] = std::max(hi[c], v);
        }
    }
    for (int c = 0; c < C; ++c) {
        m.entropy.sym_min[c] = lo[c] - margin;
        m.entropy.sym_max[c] = hi[c] + margin;
    }
}

inline std::string format_loss_line(long step, const LossBreakdown& b) {
    std::ostringstream os;
    os << step << ", " << b.lambda << ", " << std::setprecision(9) << b.R << ", " << b.D << ", " << b.total;
    return os.str();
}

template <class T>
Model<T> initial_model(const TrainConfig& cfg) {
    Model<T> m;
    m.net = init_weights<T>(cfg.network, mix_seed(cfg.seed, 7));
    m.entropy = FactorizedModel<T>::init(cfg.network.latent_channels, 10.0, mix_seed(cfg.seed, 8));
    return m;
}

// Runs `epochs` passes at one lambda, updating `m` in place. Returns the per-step losses.
// A non-finite loss or gradient restores the last good weights (also written to
// `checkpoint` when given) and throws DivergenceError.
template <class T>
std::vector<LossBreakdown> train_lambda(Model<T>& m, const std::vector<TrainSample>& data, const TrainConfig& cfg,
                                        double lambda, int epochs, std::uint64_t stream, std::ostream* log = nullptr,
                                        long* global_step = nullptr,
                                        const std::filesystem::path& checkpoint = {}) {
    if (data.empty()) throw ConfigError("training set is empty");
    Adam<T> opt(m, cfg);
    std::vector<LossBreakdown> history;
    const std::size_t per_epoch = (data.size() + static_cast<std::size_t>(cfg.batch_size) - 1) / cfg.batch_size;
    const std::size_t total_steps = std::max<std::size_t>(1, per_epoch * static_cast<std::size_t>(epochs));
    std::vector<std::size_t> order(data.size());
    long local = 0;
    for (int e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 shuffle_rng(mix_seed(mix_seed(cfg.seed, stream), static_cast<std::uint64_t>(e)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(data.size(), b + static_cast<std::size_t>(cfg.batch_size));
            Model<T> grad = zero_grad_like(m);
            LossBreakdown lb;
            lb.lambda = lambda;
            const long step = global_step ? (*global_step)++ : local;
            std::mt19937_64 noise(mix_seed(cfg.seed, 1000003ull * stream + static_cast<std::uint64_t>(local)));
            for (std::size_t i = b; i < end; ++i) {
                Graph<T> G(true);
                const NodeId<T> lam = G.constant(Graph<T>::scalar_tensor(static_cast<T>(lambda)));
                const auto ids = loss_graph(G, data[order[i]], m, &grad, lam, noise, cfg.use_prior);
                G.backward(ids.total);
                lb.R += G.scalar(ids.R);
                lb.D += G.scalar(ids.D);
                lb.total += G.scalar(ids.total);
            }
            const double inv = 1.0 / static_cast<double>(end - b);
            lb.R *= inv;
            lb.D *= inv;
            lb.total *= inv;
            for (auto& k : grad.net.layers) {
                for (auto& v : k.weights) v *= static_cast<T>(inv);
                for (auto& v : k.bias) v *= static_cast<T>(inv);
            }
            for (auto& v : grad.entropy.params) v *= static_cast<T>(inv);
            if (!std::isfinite(lb.total) || !all_finite(grad)) {
                if (!checkpoint.empty()) save_model(m, checkpoint);
                throw DivergenceError("training diverged at step " + std::to_string(step) + " (lambda " +
                                      std::to_string(lambda) + "); last good weights kept");
            }
            const double frac = static_cast<double>(local) / static_cast<double>(total_steps);
            opt.step(m, grad, cfg.lr * std::pow(cfg.lr_final, frac));
            history.push_back(lb);
            if (log) *log << format_loss_line(step, lb) << '\n';
            ++local;
        }
    }
    return history;
}

// Lambda sweep. One shared run at the smallest lambda trains from scratch; every lambda
// is then fine-tuned from that snapshot for the same number of epochs, so the models
// differ only in their rate weight. When `out_dir` is set, writes model_<index>.pgw per
// lambda (index follows cfg.lambdas).
template <class T>
std::vector<Model<T>> train(const std::vector<TrainSample>& data, const TrainConfig& cfg, std::ostream* log = nullptr,
                            const std::filesystem::path& out_dir = {}) {
    cfg.validate();
    Model<T> base = initial_model<T>(cfg);
    long step = 0;
    const double lowest = *std::min_element(cfg.lambdas.begin(), cfg.lambdas.end());
    train_lambda(base, data, cfg, lowest, cfg.pretrain_epochs, 0, log, &step,
                 out_dir.empty() ? std::filesystem::path{} : out_dir / "pretrain.pgw");
    std::vector<Model<T>> out;
    for (std::size_t i = 0; i < cfg.lambdas.size(); ++i) {
        const double lam = cfg.lambdas[i];
        const std::filesystem::path ckpt = out_dir.empty() ? std::filesystem::path{}
                                                           : out_dir / ("model_" + std::to_string(i) + ".pgw");
        Model<T> m = base;
        train_lambda(m, data, cfg, lam, cfg.epochs, i + 1, log, &step, ckpt);
        calibrate_ranges(m, data, cfg.use_prior);
        m.meta = {{"lambda", lam}, {"use_prior", cfg.use_prior}, {"seed", cfg.seed}};
        if (!out_dir.empty()) save_model(m, ckpt);
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace pgpc
