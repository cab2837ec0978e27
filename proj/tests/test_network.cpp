#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "jalign/network.hpp"
#include "test_support.hpp"

using namespace jalign;

namespace {

Patch random_patch(std::mt19937_64& rng, int channels, double scale = 1.0) {
    Patch p(kPatchSize, channels);
    std::normal_distribution<double> n(0.0, scale);
    for (double& v : p.data) v = n(rng);
    return p;
}

Vec random_vec(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(-1, 1);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = u(rng);
    return v;
}

// Direct nested-loop evaluation of the architecture.
Descriptor naive_forward(const Patch& p, const NetworkWeights& w, Branch b) {
    const ConvLayer& c1 = w.conv1(b);
    const int C = w.channels;
    std::vector<double> a1(12 * 12 * 32);
    for (int oy = 0; oy < 12; ++oy)
        for (int ox = 0; ox < 12; ++ox)
            for (int co = 0; co < 32; ++co) {
                double s = c1.bias[co];
                for (int ky = 0; ky < 5; ++ky)
                    for (int kx = 0; kx < 5; ++kx)
                        for (int ci = 0; ci < C; ++ci)
                            s += c1.weight((ky * 5 + kx) * C + ci, co) * p.data[((oy + ky) * 16 + ox + kx) * C + ci];
                a1[(oy * 12 + ox) * 32 + co] = std::tanh(s);
            }
    std::vector<double> pool(6 * 6 * 32);
    for (int py = 0; py < 6; ++py)
        for (int px = 0; px < 6; ++px)
            for (int c = 0; c < 32; ++c) {
                double m = -1e300;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) m = std::max(m, a1[((2 * py + dy) * 12 + 2 * px + dx) * 32 + c]);
                pool[(py * 6 + px) * 32 + c] = m;
            }
    std::vector<double> a2(4 * 4 * 64);
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox)
            for (int co = 0; co < 64; ++co) {
                double s = w.conv2.bias[co];
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        for (int ci = 0; ci < 32; ++ci)
                            s += w.conv2.weight((ky * 3 + kx) * 32 + ci, co) * pool[((oy + ky) * 6 + ox + kx) * 32 + ci];
                a2[(oy * 4 + ox) * 64 + co] = std::tanh(s);
            }
    Descriptor out(256);
    for (int j = 0; j < 256; ++j) {
        double s = w.fc.bias[j];
        for (int i = 0; i < 1024; ++i) s += w.fc.weight(i, j) * a2[i];
        out[j] = s;
    }
    return out;
}

}  // namespace

TEST(Network, ParameterCounts) {
    for (int c : {1, 3}) {
        const auto s = NetworkWeights::zeros(c, SharingMode::Siamese);
        const std::size_t expected = (25 * c * 32 + 32) + (9 * 32 * 64 + 64) + (1024 * 256 + 256);
        EXPECT_EQ(s.parameter_count(), expected);
        const auto p = NetworkWeights::zeros(c, SharingMode::PseudoSiamese);
        EXPECT_EQ(p.parameter_count() - s.parameter_count(), static_cast<std::size_t>(25 * c * 32 + 32));
    }
    EXPECT_EQ(NetworkWeights::zeros(1, SharingMode::Siamese).parameter_count(), 281728u);
}

TEST(Network, InitIsDeterministicAndBounded) {
    const auto a = init_weights(11, 3, SharingMode::PseudoSiamese);
    const auto b = init_weights(11, 3, SharingMode::PseudoSiamese);
    const auto c = init_weights(12, 3, SharingMode::PseudoSiamese);
    EXPECT_EQ(a.fc.weight, b.fc.weight);
    EXPECT_EQ(a.conv1_a.weight, b.conv1_a.weight);
    EXPECT_NE(a.fc.weight, c.fc.weight);
    ASSERT_TRUE(a.conv1_b.has_value());
    EXPECT_EQ(a.conv1_a.weight, a.conv1_b->weight);
    EXPECT_LE(a.conv1_a.weight.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(75.0));
    EXPECT_LE(a.fc.weight.cwiseAbs().maxCoeff(), 1.0 / 32.0);
    EXPECT_EQ(a.fc.bias.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Network, ZeroWeightsGiveZeroDescriptor) {
    std::mt19937_64 rng(1);
    const auto w = NetworkWeights::zeros(1, SharingMode::Siamese);
    const Descriptor d = forward(random_patch(rng, 1), w, Branch::First);
    ASSERT_EQ(d.size(), 256);
    EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Network, MatchesNaiveEvaluation) {
    std::mt19937_64 rng(2);
    for (int c : {1, 3}) {
        const auto w = init_weights(5, c, SharingMode::Siamese);
        for (int t = 0; t < 3; ++t) {
            const Patch p = random_patch(rng, c);
            const Descriptor a = forward(p, w, Branch::First);
            const Descriptor b = naive_forward(p, w, Branch::First);
            EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10);
        }
    }
}

TEST(Network, BatchEqualsSinglePatch) {
    std::mt19937_64 rng(3);
    const auto w = init_weights(6, 2, SharingMode::Siamese);
    std::vector<Patch> ps;
    for (int i = 0; i < 5; ++i) ps.push_back(random_patch(rng, 2));
    const ForwardCache fc = forward_batch(patches_to_batch(ps, 2), w, Branch::First);
    for (int i = 0; i < 5; ++i)
        EXPECT_LT((fc.output.row(i).transpose() - forward(ps[i], w, Branch::First)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Network, BranchSharing) {
    std::mt19937_64 rng(4);
    const Patch p = random_patch(rng, 1);
    const auto s = init_weights(7, 1, SharingMode::Siamese);
    EXPECT_EQ(forward(p, s, Branch::First), forward(p, s, Branch::Second));
    auto ps = init_weights(7, 1, SharingMode::PseudoSiamese);
    EXPECT_EQ(forward(p, ps, Branch::First), forward(p, ps, Branch::Second));
    ps.conv1_b->weight(0, 0) += 0.5;
    EXPECT_NE(forward(p, ps, Branch::First), forward(p, ps, Branch::Second));
    EXPECT_EQ(forward(p, ps, Branch::First), forward(p, s, Branch::First));
}

TEST(Network, SaturatedInputsStayFinite) {
    std::mt19937_64 rng(5);
    auto w = init_weights(8, 1, SharingMode::Siamese);
    w.conv1_a.weight *= 1e3;
    w.conv2.weight *= 1e3;
    const Patch p = random_patch(rng, 1, 1e3);
    const Descriptor d = forward(p, w, Branch::First);
    EXPECT_TRUE(d.allFinite());
    const auto g = backward(p, w, Branch::First, random_vec(rng, 256));
    EXPECT_TRUE(g.grad_weights.all_finite());
}

TEST(Network, ZeroUpstreamGivesZeroGradient) {
    std::mt19937_64 rng(6);
    const auto w = init_weights(9, 1, SharingMode::Siamese);
    const auto g = backward(random_patch(rng, 1), w, Branch::First, Vec::Zero(256));
    g.grad_weights.for_each_block([](const char*, std::span<const double> s) {
        for (double v : s) EXPECT_EQ(v, 0.0);
    });
    for (double v : g.grad_patch.data) EXPECT_EQ(v, 0.0);
}

TEST(Network, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    for (auto mode : {SharingMode::Siamese, SharingMode::PseudoSiamese}) {
        auto w = init_weights(10, 2, mode);
        if (w.conv1_b) w.conv1_b->weight *= 1.3;
        for (Branch br : {Branch::First, Branch::Second}) {
            Patch p = random_patch(rng, 2);
            const Vec up = random_vec(rng, 256);
            const auto g = backward(p, w, br, up);
            auto objective = [&] { return up.dot(forward(p, w, br)); };
            const double h = 1e-6;

            std::vector<std::span<double>> blocks, gblocks;
            w.for_each_block([&](const char*, std::span<double> s) { blocks.push_back(s); });
            auto gw = g.grad_weights;
            gw.for_each_block([&](const char*, std::span<double> s) { gblocks.push_back(s); });
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                std::uniform_int_distribution<std::size_t> pick(0, blocks[b].size() - 1);
                for (int t = 0; t < 15; ++t) {
                    const std::size_t i = pick(rng);
                    const double orig = blocks[b][i];
                    blocks[b][i] = orig + h;
                    const double fp = objective();
                    blocks[b][i] = orig - h;
                    const double fm = objective();
                    blocks[b][i] = orig;
                    EXPECT_LT(jalign::testing::rel_err(gblocks[b][i], (fp - fm) / (2 * h)), 1e-5) << b << ":" << i;
                }
            }
            for (int t = 0; t < 30; ++t) {
                const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p.data.size() - 1)(rng);
                const double orig = p.data[i];
                p.data[i] = orig + h;
                const double fp = objective();
                p.data[i] = orig - h;
                const double fm = objective();
                p.data[i] = orig;
                EXPECT_LT(jalign::testing::rel_err(g.grad_patch.data[i], (fp - fm) / (2 * h)), 1e-5);
            }
        }
    }
}

TEST(Network, BranchGradientsLandInTheRightLayer) {
    std::mt19937_64 rng(8);
    const Patch p = random_patch(rng, 1);
    const Vec up = random_vec(rng, 256);
    const auto s = init_weights(11, 1, SharingMode::Siamese);
    const auto gs = backward(p, s, Branch::Second, up);
    EXPECT_GT(gs.grad_weights.conv1_a.weight.cwiseAbs().maxCoeff(), 0.0);

    const auto ps = init_weights(11, 1, SharingMode::PseudoSiamese);
    const auto gp = backward(p, ps, Branch::Second, up);
    EXPECT_EQ(gp.grad_weights.conv1_a.weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(gp.grad_weights.conv1_b->weight, gs.grad_weights.conv1_a.weight);
    EXPECT_EQ(gp.grad_weights.fc.weight, gs.grad_weights.fc.weight);
}

TEST(Network, TiedGradientIsSumOfBranches) {
    std::mt19937_64 rng(9);
    const auto w = init_weights(12, 1, SharingMode::Siamese);
    const Patch p1 = random_patch(rng, 1), p2 = random_patch(rng, 1);
    const Vec u1 = random_vec(rng, 256), u2 = random_vec(rng, 256);
    auto g = w.zeros_like();
    const Patch a[1] = {p1}, b[1] = {p2};
    backward_batch(forward_batch(patches_to_batch(a, 1), w, Branch::First), w, Mat(u1.transpose()), g);
    backward_batch(forward_batch(patches_to_batch(b, 1), w, Branch::Second), w, Mat(u2.transpose()), g);
    const auto g1 = backward(p1, w, Branch::First, u1).grad_weights;
    const auto g2 = backward(p2, w, Branch::Second, u2).grad_weights;
    EXPECT_LT((g.conv1_a.weight - g1.conv1_a.weight - g2.conv1_a.weight).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((g.fc.weight - g1.fc.weight - g2.fc.weight).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Network, RejectsWrongPatchShape) {
    const auto w = init_weights(1, 1, SharingMode::Siamese);
    EXPECT_THROW(forward(Patch(16, 3), w, Branch::First), Error);
    EXPECT_THROW(forward(Patch(8, 1), w, Branch::First), Error);
}

TEST(WeightFile, RoundTripAndRejection) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "jalign_test_weights";
    fs::create_directories(dir);
    for (auto mode : {SharingMode::Siamese, SharingMode::PseudoSiamese}) {
        auto w = init_weights(13, 3, mode);
        w.fc.bias[3] = -0.125;
        const std::string path = (dir / "w.bin").string();
        save_weights(path, w);
        EXPECT_EQ(fs::file_size(path), 16 + 8 * w.parameter_count());
        const auto r = load_weights(path);
        EXPECT_EQ(r.mode, mode);
        EXPECT_EQ(r.channels, 3);
        std::vector<double> x, y;
        w.for_each_block([&](const char*, std::span<const double> s) { x.insert(x.end(), s.begin(), s.end()); });
        r.for_each_block([&](const char*, std::span<const double> s) { y.insert(y.end(), s.begin(), s.end()); });
        EXPECT_EQ(x, y);

        std::ofstream(path, std::ios::app | std::ios::binary) << 'x';
        EXPECT_THROW(load_weights(path), Error);
        fs::resize_file(path, 100);
        EXPECT_THROW(load_weights(path), Error);
    }
    std::ofstream((dir / "bad.bin").string()) << "not a weight file at all";
    EXPECT_THROW(load_weights((dir / "bad.bin").string()), Error);
    EXPECT_THROW(load_weights((dir / "missing.bin").string()), Error);
    fs::remove_all(dir);
}
