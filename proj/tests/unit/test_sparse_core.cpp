#include <gtest/gtest.h>

#include <cstdlib>
#include <map>
#include <random>

#include "pgpc/sparse/ops.hpp"

using namespace pgpc;

namespace {

SparseTensor<double> random_tensor(std::mt19937_64& rng, int grid, double density, int channels, int scale = 0) {
    std::vector<Coord3> coords;
    std::vector<double> feats;
    for (int x = 0; x < grid; ++x)
        for (int y = 0; y < grid; ++y)
            for (int z = 0; z < grid; ++z)
                if (uniform01(rng) < density) {
                    coords.push_back({x, y, z});
                    for (int c = 0; c < channels; ++c) feats.push_back(2 * uniform01(rng) - 1);
                }
    return make_tensor(coords, feats, channels, scale);
}

ConvKernel<double> random_kernel(std::mt19937_64& rng, std::vector<Coord3> offs, int in, int out, int stride,
                                 bool bias = false) {
    ConvKernel<double> k(std::move(offs), in, out, stride, bias);
    for (auto& w : k.weights) w = 2 * uniform01(rng) - 1;
    for (auto& b : k.bias) b = 2 * uniform01(rng) - 1;
    return k;
}

// Dense zero-padded convolution: out(u) = sum_k W_k^T f(u + o_k), evaluated at `at`.
std::vector<double> dense_conv(const SparseTensor<double>& in, const ConvKernel<double>& k, const std::vector<Coord3>& at,
                               int base_mul) {
    std::map<Coord3, const double*> grid;
    for (std::size_t i = 0; i < in.size(); ++i) grid[in.coords[i]] = in.row(i);
    std::vector<double> out(at.size() * k.out_channels, 0.0);
    for (std::size_t r = 0; r < at.size(); ++r) {
        Coord3 base{at[r].x * base_mul, at[r].y * base_mul, at[r].z * base_mul};
        for (std::size_t o = 0; o < k.offsets.size(); ++o) {
            auto it = grid.find(base + k.offsets[o]);
            if (it == grid.end()) continue;
            for (int ci = 0; ci < k.in_channels; ++ci)
                for (int co = 0; co < k.out_channels; ++co)
                    out[r * k.out_channels + co] += it->second[ci] * k.weight(o)[ci * k.out_channels + co];
        }
        for (int co = 0; co < k.out_channels && k.has_bias(); ++co) out[r * k.out_channels + co] += k.bias[co];
    }
    return out;
}

}  // namespace

TEST(SparseConv, IdentityKernelReproducesInput) {
    std::mt19937_64 rng(1);
    auto t = random_tensor(rng, 6, 0.3, 3);
    ConvKernel<double> k({{0, 0, 0}}, 3, 3, 1);
    for (int c = 0; c < 3; ++c) k.weights[c * 3 + c] = 1;
    auto out = sparse_conv(t, k);
    EXPECT_EQ(out.coords, t.coords);
    EXPECT_EQ(out.feats, t.feats);
}

TEST(SparseConv, HandEvaluatedTwoPointCase) {
    auto t = make_tensor<double>({{0, 0, 0}, {1, 0, 0}}, {1, 3}, 1);
    ConvKernel<double> k({{0, 0, 0}, {1, 0, 0}}, 1, 1, 1);
    k.weights = {1, 2};
    auto out = sparse_conv(t, k);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_DOUBLE_EQ(out.feats[0], 7.0);
    EXPECT_DOUBLE_EQ(out.feats[1], 3.0);
}

TEST(SparseConv, MatchesDenseConvolutionOnRandomGrids) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const int grid = trial < 5 ? 8 : 16;
        auto t = random_tensor(rng, grid, 0.2, 2);
        auto k = random_kernel(rng, cube_offsets(-1, 1), 2, 3, 1, trial % 2 == 0);
        auto out = sparse_conv(t, k);
        auto ref = dense_conv(t, k, t.coords, 1);
        ASSERT_EQ(out.coords, t.coords);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.feats[i], ref[i], 1e-5);
    }
}

TEST(SparseConv, StrideTwoHalvesCoordinates) {
    std::mt19937_64 rng(3);
    auto t = random_tensor(rng, 8, 0.3, 2, 1);
    auto k = random_kernel(rng, cube_offsets(0, 1), 2, 4, 2);
    auto out = sparse_conv(t, k);
    EXPECT_EQ(out.coords, downsample_coords(t.coords));
    EXPECT_EQ(out.scale, 2);
    auto ref = dense_conv(t, k, out.coords, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.feats[i], ref[i], 1e-9);
}

TEST(SparseConv, ChannelMismatchAndEmptyInput) {
    ConvKernel<double> k(cube_offsets(-1, 1), 2, 1, 1);
    SparseTensor<double> t({{0, 0, 0}}, 3);
    EXPECT_THROW(sparse_conv(t, k), ConfigError);
    SparseTensor<double> empty({}, 2);
    EXPECT_TRUE(sparse_conv(empty, k).empty());
}

TEST(TransposedConv, SingleParentDilation) {
    auto t = make_tensor<double>({{0, 0, 0}}, {2.0}, 1, 1);
    ConvKernel<double> k(cube_offsets(0, 1), 1, 1, 2);
    for (std::size_t i = 0; i < 8; ++i) k.weights[i] = static_cast<double>(i + 1);
    auto out = transposed_conv(t, k);
    EXPECT_EQ(out.coords, cube_offsets(0, 1));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(out.feats[i], 2.0 * (i + 1));
    EXPECT_EQ(out.scale, 0);
}

TEST(TransposedConv, OverlappingRegionsSum) {
    auto t = make_tensor<double>({{0, 0, 0}, {1, 0, 0}}, {1, 1}, 1, 1);
    ConvKernel<double> k(cube_offsets(-1, 1), 1, 1, 2);
    std::fill(k.weights.begin(), k.weights.end(), 1.0);
    auto out = transposed_conv(t, k);
    auto it = std::find(out.coords.begin(), out.coords.end(), Coord3{1, 0, 0});
    ASSERT_NE(it, out.coords.end());
    EXPECT_DOUBLE_EQ(out.feats[it - out.coords.begin()], 2.0);
    it = std::find(out.coords.begin(), out.coords.end(), Coord3{0, 0, 0});
    EXPECT_DOUBLE_EQ(out.feats[it - out.coords.begin()], 1.0);
}

TEST(TransposedConv, ClipsAndRejectsStrideOne) {
    auto t = make_tensor<double>({{0, 0, 0}}, {1}, 1, 1);
    ConvKernel<double> k(cube_offsets(-1, 1), 1, 1, 2);
    auto out = transposed_conv(t, k, 2);
    EXPECT_EQ(out.coords, cube_offsets(0, 1));
    ConvKernel<double> k1(cube_offsets(-1, 1), 1, 1, 1);
    EXPECT_THROW(transposed_conv(t, k1), ConfigError);
    SparseTensor<double> empty({}, 1, 1);
    EXPECT_TRUE(transposed_conv(empty, k).empty());
}

TEST(TransposedConv, ParentsSurviveDownsampling) {
    std::mt19937_64 rng(4);
    auto t = random_tensor(rng, 6, 0.3, 1, 2);
    auto k = random_kernel(rng, cube_offsets(-1, 1), 1, 2, 2);
    auto out = transposed_conv(t, k, 12);
    auto down = downsample_coords(out.coords);
    for (auto c : t.coords) EXPECT_TRUE(std::binary_search(down.begin(), down.end(), c));
}

TEST(ConvOnCoords, IdentityOnOwnCoordinates) {
    std::mt19937_64 rng(5);
    auto t = random_tensor(rng, 5, 0.4, 2);
    ConvKernel<double> k({{0, 0, 0}}, 2, 2, 1);
    k.weights = {1, 0, 0, 1};
    auto out = conv_on_coords(t, k, t.coords);
    EXPECT_EQ(out.coords, t.coords);
    EXPECT_EQ(out.feats, t.feats);
}

TEST(ConvOnCoords, TwoNeighboursFeedTheGap) {
    auto t = make_tensor<double>({{0, 0, 0}, {2, 0, 0}}, {1.5, -2.0}, 1);
    ConvKernel<double> k(cube_offsets(-1, 1), 1, 1, 1);
    const auto& offs = k.offsets;
    const std::size_t minus = std::find(offs.begin(), offs.end(), Coord3{-1, 0, 0}) - offs.begin();
    const std::size_t plus = std::find(offs.begin(), offs.end(), Coord3{1, 0, 0}) - offs.begin();
    k.weights[minus] = 0.25;
    k.weights[plus] = 3.0;
    auto out = conv_on_coords(t, k, {{1, 0, 0}});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_DOUBLE_EQ(out.feats[0], 0.25 * 1.5 + 3.0 * -2.0);
}

TEST(ConvOnCoords, EmptyReceptiveFieldGivesBiasOrZero) {
    auto t = make_tensor<double>({{0, 0, 0}}, {1}, 1);
    ConvKernel<double> k(cube_offsets(-1, 1), 1, 2, 1);
    std::fill(k.weights.begin(), k.weights.end(), 1.0);
    auto out = conv_on_coords(t, k, {{5, 5, 5}, {9, 0, 0}});
    EXPECT_EQ(out.feats, std::vector<double>(4, 0.0));
    k.bias = {0.5, -0.5};
    out = conv_on_coords(t, k, {{5, 5, 5}});
    EXPECT_EQ(out.feats, (std::vector<double>{0.5, -0.5}));
}

TEST(ConvOnCoords, OutputSetEqualsTargetForRandomCases) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        auto t = random_tensor(rng, 5, 0.2, 1);
        std::vector<Coord3> target;
        const int n = 1 + static_cast<int>(uniform01(rng) * 20);
        for (int i = 0; i < n; ++i)
            target.push_back({static_cast<int>(uniform01(rng) * 7) - 1, static_cast<int>(uniform01(rng) * 7) - 1,
                              static_cast<int>(uniform01(rng) * 7) - 1});
        auto k = random_kernel(rng, cube_offsets(-1, 1), 1, 1, 1);
        auto out = conv_on_coords(t, k, target);
        canonicalize(target);
        ASSERT_EQ(out.coords, target);
        auto ref = dense_conv(t, k, target, 1);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.feats[i], ref[i], 1e-9);
    }
}

TEST(PruneTopK, KeepsLargestLogits) {
    auto t = make_tensor<double>({{0, 0, 0}, {0, 0, 1}, {0, 0, 2}}, {1, 2, 3}, 1);
    std::vector<double> logits{0.9, 0.1, 0.5};
    auto out = prune_topk<double>(t, logits, 2);
    EXPECT_EQ(out.coords, (std::vector<Coord3>{{0, 0, 0}, {0, 0, 2}}));
    EXPECT_EQ(out.feats, (std::vector<double>{1, 3}));
    EXPECT_EQ(prune_topk<double>(t, logits, 5).coords, t.coords);
    EXPECT_TRUE(prune_topk<double>(t, logits, 0).empty());
}

TEST(PruneTopK, TiesKeepSmallestCoordinate) {
    auto t = make_tensor<double>({{3, 0, 0}, {1, 2, 0}, {1, 1, 9}}, {0, 0, 0}, 1);
    std::vector<double> logits(3, 0.5);
    auto out = prune_topk<double>(t, logits, 1);
    EXPECT_EQ(out.coords, (std::vector<Coord3>{{1, 1, 9}}));
}

TEST(PruneTopK, KeptMultisetIsTheLargest) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto t = random_tensor(rng, 6, 0.3, 1);
        std::vector<double> logits(t.size());
        for (auto& l : logits) l = std::floor(uniform01(rng) * 10);
        const std::size_t k = static_cast<std::size_t>(uniform01(rng) * t.size());
        auto rows = topk_rows<double>(logits, k);
        ASSERT_EQ(rows.size(), std::min(k, t.size()));
        std::vector<double> kept, sorted = logits;
        for (auto r : rows) kept.push_back(logits[r]);
        std::sort(kept.rbegin(), kept.rend());
        std::sort(sorted.rbegin(), sorted.rend());
        sorted.resize(k);
        EXPECT_EQ(kept, sorted);
        EXPECT_TRUE(prune_topk<double>(t, logits, k).valid());
    }
}

TEST(Concat, IdenticalCoordinateSets) {
    auto a = make_tensor<double>({{0, 0, 0}, {1, 0, 0}}, {1, 2}, 1);
    auto b = make_tensor<double>({{0, 0, 0}, {1, 0, 0}}, {3, 4}, 1);
    auto out = concat_features(a, b);
    EXPECT_EQ(out.feats, (std::vector<double>{1, 3, 2, 4}));
}

TEST(Concat, DisjointSetsZeroFill) {
    auto a = make_tensor<double>({{0, 0, 0}}, {1, 2}, 2);
    auto b = make_tensor<double>({{1, 1, 1}}, {3, 4, 5}, 3);
    auto out = concat_features(a, b);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out.channels, 5);
    EXPECT_EQ(out.feats, (std::vector<double>{1, 2, 0, 0, 0, 0, 0, 3, 4, 5}));
    SparseTensor<double> empty({}, 3);
    auto padded = concat_features(a, empty);
    EXPECT_EQ(padded.feats, (std::vector<double>{1, 2, 0, 0, 0}));
    SparseTensor<double> other({}, 3, 1);
    EXPECT_THROW(concat_features(a, other), ConfigError);
}

TEST(Linearity, AllOpsAreLinearWithoutBias) {
    std::mt19937_64 rng(8);
    auto t1 = random_tensor(rng, 6, 0.3, 2, 1);
    auto t2 = t1;
    for (auto& f : t2.feats) f = 2 * uniform01(rng) - 1;
    auto sum = t1;
    for (std::size_t i = 0; i < sum.feats.size(); ++i) sum.feats[i] += t2.feats[i];
    auto check = [&](auto op) {
        auto a = op(t1), b = op(t2), c = op(sum);
        for (std::size_t i = 0; i < c.feats.size(); ++i) EXPECT_NEAR(c.feats[i], a.feats[i] + b.feats[i], 1e-6);
    };
    auto k1 = random_kernel(rng, cube_offsets(-1, 1), 2, 3, 1);
    auto k2 = random_kernel(rng, cube_offsets(0, 1), 2, 3, 2);
    auto kt = random_kernel(rng, cube_offsets(-1, 1), 2, 3, 2);
    check([&](const auto& t) { return sparse_conv(t, k1); });
    check([&](const auto& t) { return sparse_conv(t, k2); });
    check([&](const auto& t) { return transposed_conv(t, kt); });
    check([&](const auto& t) { return conv_on_coords(t, k1, {{0, 0, 0}, {3, 3, 3}, {7, 7, 7}}); });
}

TEST(Determinism, WorkerCountDoesNotChangeResults) {
    std::mt19937_64 rng(9);
    auto t = random_tensor(rng, 16, 0.3, 4).cast<float>();
    auto k = random_kernel(rng, cube_offsets(-1, 1), 4, 8, 1).cast<float>();
    setenv("PGPC_THREADS", "1", 1);
    auto a = sparse_conv(t, k);
    setenv("PGPC_THREADS", "4", 1);
    auto b = sparse_conv(t, k);
    unsetenv("PGPC_THREADS");
    EXPECT_EQ(a.feats, b.feats);
}

TEST(Gather, BackwardIsTheAdjoint) {
    std::mt19937_64 rng(10);
    auto t = random_tensor(rng, 6, 0.3, 2, 1);
    auto k = random_kernel(rng, cube_offsets(-1, 1), 2, 3, 2, true);
    GatherMap m = transposed_map(t.coords, k.offsets, std::nullopt);
    auto y = gather_forward<double>(m, t.feats, k);
    std::vector<double> g(y.size());
    for (auto& v : g) v = 2 * uniform01(rng) - 1;
    std::vector<double> gi(t.feats.size(), 0.0), gw(k.weights.size(), 0.0), gb(3, 0.0);
    gather_backward<double>(m, t.feats, k, g, gi, gw, gb);
    // <g, J x> = <J^T g, x> for the input and weight directions.
    auto k0 = k;
    k0.bias.assign(3, 0.0);
    auto y0 = gather_forward<double>(m, t.feats, k0);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y0.size(); ++i) lhs += g[i] * y0[i];
    for (std::size_t i = 0; i < gi.size(); ++i) rhs += gi[i] * t.feats[i];
    EXPECT_NEAR(lhs, rhs, 1e-9);
    rhs = 0;
    for (std::size_t i = 0; i < gw.size(); ++i) rhs += gw[i] * k.weights[i];
    EXPECT_NEAR(lhs, rhs, 1e-9);
}
