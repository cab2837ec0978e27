#pragma once

// Descriptor matching metrics, homography error, the misalignment loss-surface sweep
// and correspondence export.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jalign/error.hpp"
#include "jalign/geometry.hpp"
#include "jalign/network.hpp"
#include "jalign/trainer.hpp"

namespace jalign {

/// Query i's ground-truth target is target i.
struct MatchResult {
    std::vector<std::size_t> nearest;
    std::vector<bool> correct;

    std::size_t size() const { return nearest.size(); }
};

/// Exhaustive L2 nearest neighbour per query; ties go to the lowest index.
inline MatchResult nn_match(std::span<const Descriptor> queries, std::span<const Descriptor> targets) {
    if (queries.empty() || targets.empty()) throw Error(ErrorKind::InvalidInput, "nn_match needs nonempty sets");
    const auto dim = queries.front().size();
    for (const auto& d : queries)
        if (d.size() != dim) throw Error(ErrorKind::InvalidInput, "descriptor dimension mismatch");
    for (const auto& d : targets)
        if (d.size() != dim) throw Error(ErrorKind::InvalidInput, "descriptor dimension mismatch");

    MatchResult m;
    m.nearest.resize(queries.size());
    m.correct.resize(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const double d = (queries[q] - targets[t]).squaredNorm();
            if (d < best) {
                best = d;
                arg = t;
            }
        }
        m.nearest[q] = arg;
        m.correct[q] = arg == q;
    }
    return m;
}

/// Fraction of queries whose nearest neighbour is the true correspondent.
inline double average_precision(const MatchResult& m) {
    if (m.correct.empty()) throw Error(ErrorKind::InvalidInput, "empty match result");
    const auto hits = std::count(m.correct.begin(), m.correct.end(), true);
    return static_cast<double>(hits) / static_cast<double>(m.correct.size());
}

inline double mean_ap(std::span<const double> aps) {
    if (aps.empty()) throw Error(ErrorKind::InvalidInput, "mean_ap needs at least one value");
    return std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
}

struct PointMatch {
    Point2 first;
    Point2 second;
};

struct HomographyError {
    double value = 0.0;
    std::size_t excluded = 0;  // matches whose warp hit the line at infinity
};

/// Mean warp residual of true matches under H_est, divided by max(w, h).
inline HomographyError homography_error(const Homography& H_est, std::span<const PointMatch> matches, int w, int h) {
    if (matches.empty()) throw Error(ErrorKind::InvalidInput, "homography_error needs matches");
    HomographyError e;
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& m : matches) {
        try {
            const Point2 p = warp_point(H_est, m.first.x, m.first.y);
            sum += std::hypot(p.x - m.second.x, p.y - m.second.y);
            ++used;
        } catch (const Error&) {
            ++e.excluded;
        }
    }
    if (used == 0) throw Error(ErrorKind::PointAtInfinity, "every match warped to infinity");
    e.value = sum / static_cast<double>(used) / static_cast<double>(std::max(w, h));
    return e;
}

/// Ground-truth matches on a regular grid over image 1 (step pixels), keeping those that
/// land inside image 2 under H_true.
inline std::vector<PointMatch> grid_matches(const Homography& H_true, ImageBounds b1, ImageBounds b2, int step) {
    std::vector<PointMatch> out;
    for (int y = step / 2; y < b1.height; y += step)
        for (int x = step / 2; x < b1.width; x += step) {
            try {
                const Point2 q = warp_point(H_true, x, y);
                if (b2.strictly_inside(q.x, q.y)) out.push_back({{double(x), double(y)}, q});
            } catch (const Error&) {
            }
        }
    return out;
}

/// Correspondences under psi_star: every keypoint whose warp lands strictly inside I'.
inline std::vector<PositivePair> export_correspondences(const PsiParams& psi_star, std::span<const Keypoint> keypoints,
                                                        ImageBounds bounds2) {
    return regenerate_positives(keypoints, psi_star, bounds2, 0);
}

/// Descriptor extractors used by the evaluation harness.
enum class DescriptorKind { Learned, RawPatch, CenterPixel };

inline std::vector<Descriptor> compute_descriptors(const Image& img, std::span<const Keypoint> kps,
                                                   DescriptorKind kind, const NetworkWeights* w, Branch branch,
                                                   double magnification) {
    std::vector<Descriptor> out;
    out.reserve(kps.size());
    constexpr std::size_t kChunk = 256;
    std::vector<Patch> patches;
    for (std::size_t start = 0; start < kps.size(); start += kChunk) {
        patches.clear();
        const std::size_t end = std::min(kps.size(), start + kChunk);
        for (std::size_t i = start; i < end; ++i)
            patches.push_back(extract_patch(img, kps[i], kPatchSize, magnification));
        if (kind == DescriptorKind::Learned) {
            if (!w) throw Error(ErrorKind::InvalidInput, "learned descriptors need weights");
            const ForwardCache fc = forward_batch(patches_to_batch(patches, img.channels), *w, branch);
            for (Eigen::Index r = 0; r < fc.output.rows(); ++r) out.push_back(fc.output.row(r).transpose());
        } else if (kind == DescriptorKind::RawPatch) {
            for (const auto& p : patches)
                out.push_back(Eigen::Map<const Eigen::VectorXd>(p.data.data(), static_cast<Eigen::Index>(p.size())));
        } else {
            const int mid = kPatchSize / 2;
            for (const auto& p : patches) {
                Descriptor d(p.channels);
                for (int c = 0; c < p.channels; ++c)
                    d[c] = p.data[(static_cast<std::size_t>(mid) * kPatchSize + mid) * p.channels + c];
                out.push_back(d);
            }
        }
    }
    return out;
}

struct DescriptorEvaluation {
    double ap = 0.0;
    std::size_t pairs = 0;
    MatchResult matches;
};

/// AP of a descriptor on the true correspondences of keypoints under H_true.
inline DescriptorEvaluation evaluate_descriptor(const Image& img1, const Image& img2, const Homography& H_true,
                                                std::span<const Keypoint> keypoints, DescriptorKind kind,
                                                const NetworkWeights* w, double magnification) {
    const auto pairs = export_correspondences(homography_to_psi(H_true, img1.width, img1.height), keypoints,
                                              bounds_of(img2));
    if (pairs.empty()) throw Error(ErrorKind::InsufficientOverlap, "no evaluation keypoint lands inside image 2");
    std::vector<Keypoint> k1, k2;
    for (const auto& p : pairs) {
        k1.push_back(p.first);
        k2.push_back(p.second);
    }
    DescriptorEvaluation ev;
    const auto q = compute_descriptors(img1, k1, kind, w, Branch::First, magnification);
    const auto t = compute_descriptors(img2, k2, kind, w, Branch::Second, magnification);
    ev.matches = nn_match(q, t);
    ev.ap = average_precision(ev.matches);
    ev.pairs = pairs.size();
    return ev;
}

struct SweepCell {
    double dx = 0.0;
    double dy = 0.0;
    double value = std::numeric_limits<double>::quiet_NaN();
    std::optional<std::string> error;
};

struct SweepGrid {
    std::vector<SweepCell> cells;  // one per requested offset, in input order
};

/// Symmetric offsets from -radius to radius in `step` increments; dy outer, dx inner.
inline std::vector<Point2> sweep_offsets(double radius, double step) {
    if (!(radius >= 0.0) || !(step > 0.0)) throw Error(ErrorKind::InvalidParameter, "sweep radius/step invalid");
    const int k = static_cast<int>(std::floor(radius / step + 1e-9));
    std::vector<Point2> out;
    for (int j = -k; j <= k; ++j)
        for (int i = -k; i <= k; ++i) out.push_back({i * step, j * step});
    return out;
}

/// Mean of the final `fraction` of a loss trace (at least one entry).
inline double tail_mean(std::span<const double> trace, double fraction = 0.1) {
    if (trace.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(trace.size() * fraction)));
    return std::accumulate(trace.end() - static_cast<std::ptrdiff_t>(n), trace.end(), 0.0) / static_cast<double>(n);
}

/// For each offset, trains a fresh descriptor with psi fixed at translate(offset) * H(psi_true)
/// and records the mean batch loss over the final 10% of iterations.
inline SweepGrid loss_surface_sweep(const Image& img1, const Image& img2, const PsiParams& psi_true,
                                    std::span<const Point2> offsets, const TrainConfig& cfg) {
    const Homography H_true = psi_to_homography(psi_true);
    SweepGrid grid;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        SweepCell cell{offsets[i].x, offsets[i].y};
        try {
            const Homography H = Homography::translation(cell.dx, cell.dy) * H_true;
            const PsiParams psi = homography_to_psi(H, psi_true.w, psi_true.h, psi_true.alpha);
            std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                              static_cast<std::uint32_t>(i)};
            Rng rng(seq);
            LevelOptions opts;
            opts.optimize_psi = false;
            const LevelResult r = train_level(img1, img2, psi, cfg, rng, opts);
            cell.value = tail_mean(r.loss_trace);
        } catch (const Error& e) {
            cell.error = e.what();
        }
        grid.cells.push_back(std::move(cell));
    }
    return grid;
}

}  // namespace jalign
