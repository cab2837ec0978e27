#pragma once

// Keypoint sampling grids and differentiable bilinear patch extraction.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "jalign/error.hpp"
#include "jalign/geometry.hpp"
#include "jalign/image.hpp"

namespace jalign {

inline constexpr int kPatchSize = 16;

/// n x n x c samples, row-major, channel-interleaved.
struct Patch {
    int n = kPatchSize;
    int channels = 1;
    std::vector<double> data;

    Patch() = default;
    Patch(int side, int c) : n(side), channels(c), data(static_cast<std::size_t>(side) * side * c, 0.0) {}

    std::size_t size() const { return data.size(); }
};

/// Grid spacing per unit of frame vector length: a = magnification / (n - 1).
inline double grid_unit(int n, double magnification) { return n > 1 ? magnification / (n - 1) : 0.0; }

/// Unrotated grid offset for index i along one axis, in units of the grid spacing.
inline double grid_offset(int n, int i) { return i - 0.5 * (n - 1); }

/// Grid centred at the frame position, rotated by the frame orientation, footprint side
/// magnification * s. Expressed through the frame vector so it is linear in (x, y, v0, v1).
inline std::vector<Point2> sample_grid(const WarpedFrame& f, int n, double magnification) {
    if (n < 1) throw Error(ErrorKind::InvalidParameter, "grid side must be at least 1");
    if (!(magnification > 0.0)) throw Error(ErrorKind::InvalidParameter, "magnification must be positive");
    const double a = grid_unit(n, magnification);
    std::vector<Point2> pts;
    pts.reserve(static_cast<std::size_t>(n) * n);
    for (int r = 0; r < n; ++r) {
        const double v = grid_offset(n, r);
        for (int c = 0; c < n; ++c) {
            const double u = grid_offset(n, c);
            pts.push_back({f.x + a * (f.v0 * u - f.v1 * v), f.y + a * (f.v1 * u + f.v0 * v)});
        }
    }
    return pts;
}

inline WarpedFrame keypoint_frame(const Keypoint& k) {
    return {k.x, k.y, k.s * std::cos(k.phi), k.s * std::sin(k.phi)};
}

inline std::vector<Point2> sample_grid(const Keypoint& k, int n, double magnification) {
    return sample_grid(keypoint_frame(k), n, magnification);
}

namespace detail {

struct BilinearCell {
    int x0, x1, y0, y1;
    double fx, fy;
    bool clamped_x, clamped_y;
};

inline BilinearCell bilinear_cell(const Image& img, double x, double y) {
    BilinearCell c{};
    const double xmax = img.width - 1.0, ymax = img.height - 1.0;
    c.clamped_x = x < 0.0 || x > xmax;
    c.clamped_y = y < 0.0 || y > ymax;
    x = std::clamp(x, 0.0, xmax);
    y = std::clamp(y, 0.0, ymax);
    c.x0 = std::min(static_cast<int>(std::floor(x)), std::max(0, img.width - 2));
    c.y0 = std::min(static_cast<int>(std::floor(y)), std::max(0, img.height - 2));
    c.x1 = std::min(c.x0 + 1, img.width - 1);
    c.y1 = std::min(c.y0 + 1, img.height - 1);
    c.fx = x - c.x0;
    c.fy = y - c.y0;
    return c;
}

}  // namespace detail

/// Bilinear interpolation per channel with clamp-to-border. Returns a square patch
/// when coords has n*n entries.
inline Patch bilinear_sample(const Image& img, std::span<const Point2> coords) {
    const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(coords.size()))));
    if (static_cast<std::size_t>(n) * n != coords.size())
        throw Error(ErrorKind::InvalidInput, "coordinate list is not a square grid");
    Patch p(n, img.channels);
    const int ch = img.channels;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto c = detail::bilinear_cell(img, coords[i].x, coords[i].y);
        for (int k = 0; k < ch; ++k) {
            const double top = (1.0 - c.fx) * img.at(c.x0, c.y0, k) + c.fx * img.at(c.x1, c.y0, k);
            const double bot = (1.0 - c.fx) * img.at(c.x0, c.y1, k) + c.fx * img.at(c.x1, c.y1, k);
            p.data[i * ch + k] = (1.0 - c.fy) * top + c.fy * bot;
        }
    }
    return p;
}

/// Upstream-contracted gradient of bilinear_sample w.r.t. each sampling coordinate.
/// Clamped directions get zero.
inline std::vector<Point2> bilinear_sample_backward(const Image& img, std::span<const Point2> coords,
                                                    std::span<const double> upstream) {
    const int ch = img.channels;
    if (upstream.size() != coords.size() * ch)
        throw Error(ErrorKind::InvalidInput, "upstream gradient shape does not match the sampled patch");
    std::vector<Point2> grad(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto c = detail::bilinear_cell(img, coords[i].x, coords[i].y);
        double gx = 0.0, gy = 0.0;
        for (int k = 0; k < ch; ++k) {
            const double g = upstream[i * ch + k];
            if (g == 0.0) continue;
            const double i00 = img.at(c.x0, c.y0, k), i10 = img.at(c.x1, c.y0, k);
            const double i01 = img.at(c.x0, c.y1, k), i11 = img.at(c.x1, c.y1, k);
            if (!c.clamped_x && c.x1 != c.x0) gx += g * ((1.0 - c.fy) * (i10 - i00) + c.fy * (i11 - i01));
            if (!c.clamped_y && c.y1 != c.y0) gy += g * ((1.0 - c.fx) * (i01 - i00) + c.fx * (i11 - i10));
        }
        grad[i] = {gx, gy};
    }
    return grad;
}

/// Chains per-coordinate gradients through the grid construction to the frame
/// parameters (x, y, v0, v1).
inline std::array<double, 4> grid_backward(std::span<const Point2> coord_grad, int n, double magnification) {
    const double a = grid_unit(n, magnification);
    std::array<double, 4> g{};
    for (int r = 0; r < n; ++r) {
        const double v = grid_offset(n, r);
        for (int c = 0; c < n; ++c) {
            const double u = grid_offset(n, c);
            const Point2 d = coord_grad[static_cast<std::size_t>(r) * n + c];
            g[0] += d.x;
            g[1] += d.y;
            g[2] += a * (d.x * u + d.y * v);
            g[3] += a * (-d.x * v + d.y * u);
        }
    }
    return g;
}

/// B(p; I): the patch for keypoint k.
inline Patch extract_patch(const Image& img, const Keypoint& k, int n, double magnification) {
    const auto grid = sample_grid(k, n, magnification);
    return bilinear_sample(img, grid);
}

}  // namespace jalign
