#pragma once

// Joint optimization of descriptor weights and homography parameters by momentum SGD,
// per pyramid level, and the coarse-to-fine alignment driver.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "jalign/error.hpp"
#include "jalign/geometry.hpp"
#include "jalign/image.hpp"
#include "jalign/loss.hpp"
#include "jalign/network.hpp"
#include "jalign/sampling.hpp"

namespace jalign {

using Rng = std::mt19937_64;

struct TrainConfig {
    int keypoints_per_image = 4000;
    double grad_threshold = 0.05;
    double log2_scale_min = 0.0;
    double log2_scale_max = 4.0;
    double tau = 32.0;  // pixels at full resolution
    int negatives_per_positive = 1;
    int batch_size = 64;
    double momentum = 0.9;
    double lr0 = 1e-4;
    double lr_decay = 0.9995;
    int iters_per_level = 2000;
    double pyramid_factor = 2.0;
    int pyramid_min_size = 80;
    double alpha = 64.0;
    double mu = 1.0;
    double magnification = 2.0;
    std::uint64_t seed = 0;
    SharingMode mode = SharingMode::Siamese;

    void validate() const {
        auto require = [](bool ok, const char* what) {
            if (!ok) throw Error(ErrorKind::Config, what);
        };
        require(keypoints_per_image >= 1, "keypoints_per_image must be >= 1");
        require(grad_threshold > 0.0, "grad_threshold must be > 0");
        require(log2_scale_max > log2_scale_min, "log2 scale range must be nondegenerate");
        require(tau > 0.0, "tau must be > 0");
        require(negatives_per_positive >= 1, "negatives_per_positive must be >= 1");
        require(batch_size >= 1, "batch_size must be >= 1");
        require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
        require(lr0 >= 0.0 && std::isfinite(lr0), "lr0 must be finite and >= 0");
        require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must lie in (0, 1]");
        require(iters_per_level >= 1, "iters_per_level must be >= 1");
        require(pyramid_factor > 1.0, "pyramid_factor must be > 1");
        require(pyramid_min_size >= 8, "pyramid_min_size must be >= 8");
        require(alpha > 0.0, "alpha must be > 0");
        require(mu > 0.0, "mu must be > 0");
        require(magnification > 0.0, "magnification must be > 0");
    }
};

struct ImageBounds {
    int width = 0;
    int height = 0;

    bool strictly_inside(double x, double y) const {
        return x > 0.0 && y > 0.0 && x < width - 1.0 && y < height - 1.0;
    }
};

inline ImageBounds bounds_of(const Image& img) { return {img.width, img.height}; }

namespace detail {

inline std::vector<std::size_t> textured_pixels(const Image& grad_map, double threshold) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < grad_map.data.size(); ++i)
        if (grad_map.data[i] > threshold) idx.push_back(i);
    return idx;
}

inline Keypoint random_frame(const Image& grad_map, const std::vector<std::size_t>& pixels,
                             const TrainConfig& cfg, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, pixels.size() - 1);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> log_scale(cfg.log2_scale_min, cfg.log2_scale_max);
    const std::size_t p = pixels[pick(rng)];
    const double x = static_cast<double>(p % grad_map.width);
    const double y = static_cast<double>(p / grad_map.width);
    const double phi = angle(rng);
    const double s = std::exp2(log_scale(rng));
    return Keypoint::make(x, y, phi, s);
}

}  // namespace detail

/// Up to keypoints_per_image frames at pixels whose gradient magnitude exceeds the
/// threshold, with uniform orientation and log2-uniform scale.
inline std::vector<Keypoint> sample_keypoints(const Image& img, const Image& grad_map, const TrainConfig& cfg,
                                              Rng& rng) {
    const auto pixels = detail::textured_pixels(grad_map, cfg.grad_threshold);
    if (pixels.empty()) throw Error(ErrorKind::InsufficientTexture, "no pixel exceeds the gradient threshold");
    (void)img;
    std::vector<Keypoint> kps;
    kps.reserve(cfg.keypoints_per_image);
    for (int i = 0; i < cfg.keypoints_per_image; ++i) kps.push_back(detail::random_frame(grad_map, pixels, cfg, rng));
    return kps;
}

inline std::vector<Keypoint> sample_keypoints(const Image& img, const TrainConfig& cfg, Rng& rng) {
    return sample_keypoints(img, gradient_magnitude_map(img), cfg, rng);
}

/// A keypoint in I paired with a non-corresponding frame in I'.
struct NegativePair {
    Keypoint first;
    Keypoint second;
};

/// Negatives whose I' position lies at least tau pixels from the true correspondent
/// under psi0. Frames in I' are drawn independently (textured position, random phi and s).
inline std::vector<NegativePair> build_negative_set(std::span<const Keypoint> kps, const Image& img2,
                                                    const PsiParams& psi0, const TrainConfig& cfg, Rng& rng) {
    if (kps.empty()) throw Error(ErrorKind::InvalidInput, "negative set needs keypoints");
    const double diag = std::hypot(img2.width - 1.0, img2.height - 1.0);
    if (cfg.tau > diag) throw Error(ErrorKind::InfeasibleNegatives, "tau exceeds the image diagonal");
    const Image grad2 = gradient_magnitude_map(img2);
    const auto pixels = detail::textured_pixels(grad2, cfg.grad_threshold);
    if (pixels.empty()) throw Error(ErrorKind::InsufficientTexture, "second image has no textured pixels");
    const Homography H = psi_to_homography(psi0);

    constexpr int kMaxAttempts = 100;
    std::vector<NegativePair> out;
    out.reserve(kps.size() * cfg.negatives_per_positive);
    for (const Keypoint& p : kps) {
        Point2 target;
        try {
            target = warp_point(H, p.x, p.y);
        } catch (const Error&) {
            target = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
        }
        for (int n = 0; n < cfg.negatives_per_positive; ++n) {
            for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
                const Keypoint q = detail::random_frame(grad2, pixels, cfg, rng);
                if (std::hypot(q.x - target.x, q.y - target.y) >= cfg.tau) {
                    out.push_back({p, q});
                    break;
                }
            }
        }
    }
    if (out.empty()) throw Error(ErrorKind::InfeasibleNegatives, "no negative satisfies the tau separation");
    return out;
}

struct PositivePair {
    Keypoint first;
    Keypoint second;  // warped frame in I'
};

/// (p, warp(p)) for every keypoint whose warp lands strictly inside I' with a
/// non-degenerate frame.
inline std::vector<PositivePair> regenerate_positives(std::span<const Keypoint> kps, const PsiParams& psi,
                                                      ImageBounds bounds2, std::size_t min_required = 0) {
    const Homography H = psi_to_homography(psi);
    std::vector<PositivePair> out;
    out.reserve(kps.size());
    for (const Keypoint& p : kps) {
        try {
            const Keypoint q = warp_keypoint(H, p);
            if (bounds2.strictly_inside(q.x, q.y)) out.push_back({p, q});
        } catch (const Error&) {
        }
    }
    if (out.size() < min_required)
        throw Error(ErrorKind::InsufficientOverlap, "only " + std::to_string(out.size()) +
                                                        " positives survive, need " + std::to_string(min_required));
    return out;
}

using PsiVector = std::array<double, 8>;

struct TrainState {
    PsiParams psi;
    NetworkWeights weights;
    NetworkWeights velocity_theta;
    PsiVector velocity_psi{};
    std::int64_t iteration = 0;

    TrainState() = default;
    TrainState(const PsiParams& p, NetworkWeights w)
        : psi(p), weights(std::move(w)), velocity_theta(weights.zeros_like()) {}
};

inline double learning_rate(const TrainConfig& cfg, std::int64_t iteration) {
    return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(iteration));
}

/// Classical momentum, one learning rate for theta and psi:
/// v <- momentum * v - lr * g; param <- param + v; lr = lr0 * lr_decay^iteration.
inline void sgd_step(TrainState& state, const NetworkWeights& grad_theta, const PsiVector& grad_psi,
                     const TrainConfig& cfg, bool update_psi = true) {
    if (!grad_theta.all_finite() || !std::all_of(grad_psi.begin(), grad_psi.end(), [](double g) { return std::isfinite(g); }))
        throw Error(ErrorKind::Diverged, "non-finite gradient at iteration " + std::to_string(state.iteration));
    const double lr = learning_rate(cfg, state.iteration);
    std::vector<std::span<const double>> grads;
    grad_theta.for_each_block([&](const char*, std::span<const double> s) { grads.push_back(s); });
    std::vector<std::span<double>> vels;
    state.velocity_theta.for_each_block([&](const char*, std::span<double> s) { vels.push_back(s); });
    std::size_t b = 0;
    state.weights.for_each_block([&](const char*, std::span<double> params) {
        auto g = grads[b];
        auto v = vels[b];
        for (std::size_t i = 0; i < params.size(); ++i) {
            v[i] = cfg.momentum * v[i] - lr * g[i];
            params[i] += v[i];
        }
        ++b;
    });
    if (update_psi) {
        for (int i = 0; i < 8; ++i) {
            state.velocity_psi[i] = cfg.momentum * state.velocity_psi[i] - lr * grad_psi[i];
            state.psi.psi[i] += state.velocity_psi[i];
        }
    }
    ++state.iteration;
}

struct BatchGradients {
    double loss = 0.0;
    double positive_loss = 0.0;
    double negative_loss = 0.0;
    NetworkWeights grad_theta;
    PsiVector grad_psi{};
};

/// Buffers reused across evaluate_batch calls.
struct BatchWorkspace {
    Mat in1, in2, up1, up2, grad_in2;
    ForwardCache fc1, fc2;
    BackwardScratch scratch;
    std::vector<std::vector<Point2>> grids2;
};

/// Batch objective and its gradients. Positive I' patches are resampled at
/// warp(p; psi), so the objective is a differentiable function of psi; negatives do not
/// depend on psi.
inline void evaluate_batch(const Image& img1, const Image& img2, const PsiParams& psi, const NetworkWeights& w,
                           std::span<const Keypoint> positives, std::span<const NegativePair> negatives,
                           const TrainConfig& cfg, bool need_psi_grad, BatchGradients& out, BatchWorkspace& ws) {
    const int n = kPatchSize;
    const int c = w.channels;
    if (img1.channels != c || img2.channels != c)
        throw Error(ErrorKind::InvalidInput, "image channels do not match the network");
    const std::size_t P = positives.size();
    const std::size_t N = negatives.size();
    const auto rows = static_cast<Eigen::Index>(P + N);
    const Homography H = psi_to_homography(psi);
    const int patch_len = n * n * c;

    ws.in1.resize(rows, patch_len);
    ws.in2.resize(rows, patch_len);
    ws.grids2.resize(P);
    auto put = [&](Mat& m, std::size_t row, const Patch& p) {
        std::memcpy(m.row(static_cast<Eigen::Index>(row)).data(), p.data.data(), p.data.size() * sizeof(double));
    };
    for (std::size_t i = 0; i < P; ++i) {
        const WarpedFrame f2 = warp_frame(H, positives[i]);
        if (!(std::hypot(f2.v0, f2.v1) > kDegenerateScaleEps))
            throw Error(ErrorKind::DegenerateFrame, "warped positive frame collapsed");
        put(ws.in1, i, extract_patch(img1, positives[i], n, cfg.magnification));
        ws.grids2[i] = sample_grid(f2, n, cfg.magnification);
        put(ws.in2, i, bilinear_sample(img2, ws.grids2[i]));
    }
    for (std::size_t j = 0; j < N; ++j) {
        put(ws.in1, P + j, extract_patch(img1, negatives[j].first, n, cfg.magnification));
        put(ws.in2, P + j, extract_patch(img2, negatives[j].second, n, cfg.magnification));
    }

    forward_batch(ws.in1, w, Branch::First, ws.fc1);
    forward_batch(ws.in2, w, Branch::Second, ws.fc2);

    if (out.grad_theta.mode != w.mode || out.grad_theta.channels != w.channels ||
        out.grad_theta.conv2.weight.size() == 0)
        out.grad_theta = w.zeros_like();
    else
        out.grad_theta.for_each_block([](const char*, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    out.grad_psi.fill(0.0);
    out.positive_loss = 0.0;
    out.negative_loss = 0.0;

    ws.up1.resize(rows, kDescriptorDim);
    ws.up2.resize(rows, kDescriptorDim);
    const LossConfig lc{cfg.mu};
    for (std::size_t i = 0; i < P + N; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const auto f1 = ws.fc1.output.row(r).transpose();
        const auto f2 = ws.fc2.output.row(r).transpose();
        const PairLoss l = i < P ? positive_loss(f1, f2) : negative_loss(f1, f2, lc);
        (i < P ? out.positive_loss : out.negative_loss) += l.value;
        ws.up1.row(r) = l.g1.transpose();
        ws.up2.row(r) = l.g2.transpose();
    }
    out.loss = out.positive_loss + out.negative_loss;

    backward_batch(ws.fc1, w, ws.up1, out.grad_theta, nullptr, ws.scratch);
    const bool psi_grad = need_psi_grad && P > 0;
    backward_batch(ws.fc2, w, ws.up2, out.grad_theta, psi_grad ? &ws.grad_in2 : nullptr, ws.scratch);

    if (psi_grad) {
        for (std::size_t i = 0; i < P; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const auto coord_grad = bilinear_sample_backward(
                img2, ws.grids2[i],
                std::span<const double>(ws.grad_in2.row(r).data(), static_cast<std::size_t>(patch_len)));
            const auto gf = grid_backward(coord_grad, n, cfg.magnification);
            const Jacobian4x8 J = warp_frame_jacobian_psi(psi, positives[i]);
            for (int k = 0; k < 8; ++k)
                out.grad_psi[k] += gf[0] * J(0, k) + gf[1] * J(1, k) + gf[2] * J(2, k) + gf[3] * J(3, k);
        }
    }
}

inline BatchGradients evaluate_batch(const Image& img1, const Image& img2, const PsiParams& psi,
                                     const NetworkWeights& w, std::span<const Keypoint> positives,
                                     std::span<const NegativePair> negatives, const TrainConfig& cfg,
                                     bool need_psi_grad = true) {
    BatchGradients out;
    BatchWorkspace ws;
    evaluate_batch(img1, img2, psi, w, positives, negatives, cfg, need_psi_grad, out, ws);
    return out;
}

struct LevelOptions {
    bool optimize_psi = true;
    int level_index = 0;
    /// Called after every iteration with (iteration, batch loss, psi).
    std::function<void(int, double, const PsiParams&)> on_iteration;
};

struct LevelResult {
    PsiParams psi;
    NetworkWeights weights;
    std::vector<double> loss_trace;
    std::vector<Keypoint> keypoints;
    std::size_t negative_count = 0;
};

namespace detail {

/// First k entries of a uniform random permutation of [0, n).
inline std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, n - 1);
        std::swap(idx[i], idx[d(rng)]);
    }
    idx.resize(k);
    return idx;
}

inline std::vector<std::size_t> draw_batch(std::size_t n, std::size_t k, Rng& rng) {
    if (n >= k) return draw_without_replacement(n, k, rng);
    std::vector<std::size_t> idx(k);
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    for (auto& i : idx) i = d(rng);
    return idx;
}

}  // namespace detail

/// One pyramid level: fresh weights, keypoints and a fixed negative set, then
/// iters_per_level momentum-SGD steps over (theta, psi). With optimize_psi = false
/// psi stays at psi_init (supervised descriptor learning).
inline LevelResult train_level(const Image& img1, const Image& img2, const PsiParams& psi_init,
                               const TrainConfig& cfg, Rng& rng, const LevelOptions& opts = {}) {
    cfg.validate();
    if (img1.channels != img2.channels) throw Error(ErrorKind::InvalidInput, "image channel counts differ");
    const std::uint64_t weight_seed = rng();
    TrainState state(psi_init, init_weights(weight_seed, img1.channels, cfg.mode));

    LevelResult res;
    res.keypoints = sample_keypoints(img1, cfg, rng);
    const auto negatives = build_negative_set(res.keypoints, img2, psi_init, cfg, rng);
    res.negative_count = negatives.size();
    const ImageBounds b2 = bounds_of(img2);
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    res.loss_trace.reserve(cfg.iters_per_level);
    std::vector<Keypoint> pos_batch(batch);
    std::vector<NegativePair> neg_batch(batch);
    BatchGradients g;
    BatchWorkspace ws;
    for (int it = 0; it < cfg.iters_per_level; ++it) {
        const auto positives = regenerate_positives(res.keypoints, state.psi, b2, batch);
        const auto pi = detail::draw_without_replacement(positives.size(), batch, rng);
        const auto ni = detail::draw_batch(negatives.size(), batch, rng);
        for (std::size_t i = 0; i < batch; ++i) {
            pos_batch[i] = positives[pi[i]].first;
            neg_batch[i] = negatives[ni[i]];
        }
        evaluate_batch(img1, img2, state.psi, state.weights, pos_batch, neg_batch, cfg, opts.optimize_psi, g, ws);
        if (!std::isfinite(g.loss))
            throw Error(ErrorKind::Diverged, "non-finite loss at level " + std::to_string(opts.level_index) +
                                                 ", iteration " + std::to_string(it));
        res.loss_trace.push_back(g.loss);
        try {
            sgd_step(state, g.grad_theta, g.grad_psi, cfg, opts.optimize_psi);
        } catch (const Error& e) {
            throw Error(e.kind(), "level " + std::to_string(opts.level_index) + ", iteration " +
                                      std::to_string(it) + ": " + e.what());
        }
        if (opts.on_iteration) opts.on_iteration(it, g.loss, state.psi);
    }
    res.psi = state.psi;
    res.weights = std::move(state.weights);
    return res;
}

/// Affine map from level-k pixel coordinates to level-0 coordinates for a pyramid
/// built with build_pyramid: x0 = scale * xk + offset.
struct LevelTransform {
    double scale = 1.0;
    double offset = 0.0;
};

inline LevelTransform level_transform(double factor, int level) {
    const double s = std::pow(factor, level);
    return {s, 0.5 * (s - 1.0)};
}

/// Full-resolution homography expressed in level-k coordinates.
inline Homography homography_to_level(const Homography& H, double factor, int level) {
    const LevelTransform t = level_transform(factor, level);
    return rescale_homography(H, 1.0 / t.scale, 1.0 / t.scale, -t.offset / t.scale, -t.offset / t.scale);
}

inline Homography homography_from_level(const Homography& Hk, double factor, int level) {
    const LevelTransform t = level_transform(factor, level);
    return rescale_homography(Hk, t.scale, t.scale, t.offset, t.offset);
}

struct LevelReport {
    int index = 0;
    int width = 0;
    int height = 0;
    PsiParams psi_init;
    PsiParams psi_final;
    std::vector<double> loss_trace;
    double seconds = 0.0;
};

struct AlignResult {
    PsiParams psi;  // full resolution, normalized by image 1 dimensions
    Homography homography;
    NetworkWeights weights;
    std::vector<LevelReport> levels;  // in execution order, coarsest first
    std::vector<Keypoint> keypoints;  // finest-level keypoints in I
};

struct AlignOptions {
    std::function<void(int level, int iteration, double loss, const PsiParams&)> on_iteration;
};

/// Coarse-to-fine joint alignment. Inputs are normalized full-resolution images;
/// psi_init is expressed with image 1's full-resolution dimensions.
inline AlignResult align(const Image& img1, const Image& img2, const PsiParams& psi_init, const TrainConfig& cfg,
                         const AlignOptions& opts = {}) {
    cfg.validate();
    const Pyramid p1 = build_pyramid(img1, cfg.pyramid_factor, cfg.pyramid_min_size);
    const Pyramid p2 = build_pyramid(img2, cfg.pyramid_factor, cfg.pyramid_min_size);
    const int levels = static_cast<int>(std::min(p1.size(), p2.size()));

    AlignResult out;
    Homography H = psi_to_homography(psi_init);
    for (int k = levels - 1; k >= 0; --k) {
        const auto t0 = std::chrono::steady_clock::now();
        const Image l1 = k == 0 ? img1 : normalize_image(p1.levels[k]);
        const Image l2 = k == 0 ? img2 : normalize_image(p2.levels[k]);
        TrainConfig lcfg = cfg;
        lcfg.tau = cfg.tau / level_transform(cfg.pyramid_factor, k).scale;

        LevelReport rep;
        rep.index = k;
        rep.width = l1.width;
        rep.height = l1.height;
        rep.psi_init = homography_to_psi(homography_to_level(H, cfg.pyramid_factor, k), l1.width, l1.height, cfg.alpha);

        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(k)};
        Rng rng(seq);
        LevelOptions lopts;
        lopts.level_index = k;
        if (opts.on_iteration)
            lopts.on_iteration = [&](int it, double loss, const PsiParams& p) { opts.on_iteration(k, it, loss, p); };
        LevelResult lr;
        try {
            lr = train_level(l1, l2, rep.psi_init, lcfg, rng, lopts);
        } catch (const Error& e) {
            throw Error(e.kind(), "pyramid level " + std::to_string(k) + ": " + e.what());
        }
        rep.psi_final = lr.psi;
        rep.loss_trace = std::move(lr.loss_trace);
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        H = homography_from_level(psi_to_homography(lr.psi), cfg.pyramid_factor, k);
        out.levels.push_back(std::move(rep));
        if (k == 0) {
            out.weights = std::move(lr.weights);
            out.keypoints = std::move(lr.keypoints);
        }
    }
    out.homography = H;
    out.psi = homography_to_psi(H, img1.width, img1.height, cfg.alpha);
    return out;
}

}  // namespace jalign
