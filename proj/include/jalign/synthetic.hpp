#pragma once

// Procedural test imagery and exact homography warps for building synthetic pairs.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "jalign/geometry.hpp"
#include "jalign/image.hpp"
#include "jalign/sampling.hpp"

namespace jalign {

/// Multi-octave value noise in [0, 1]: random lattices at periods 32, 16, 8 and 4 px,
/// bilinearly upsampled with amplitude halving per octave.
inline Image make_texture(int width, int height, std::uint64_t seed, int channels = 1) {
    Image out(width, height, channels);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double amp = 1.0, total = 0.0;
    for (int period : {32, 16, 8, 4}) {
        const int gw = width / period + 2, gh = height / period + 2;
        std::vector<double> lattice(static_cast<std::size_t>(gw) * gh * channels);
        for (double& v : lattice) v = u(rng);
        for (int y = 0; y < height; ++y) {
            const double fy = static_cast<double>(y) / period;
            const int y0 = static_cast<int>(fy);
            const double ty = fy - y0;
            for (int x = 0; x < width; ++x) {
                const double fx = static_cast<double>(x) / period;
                const int x0 = static_cast<int>(fx);
                const double tx = fx - x0;
                for (int c = 0; c < channels; ++c) {
                    auto L = [&](int i, int j) { return lattice[(static_cast<std::size_t>(j) * gw + i) * channels + c]; };
                    const double v = (1 - ty) * ((1 - tx) * L(x0, y0) + tx * L(x0 + 1, y0)) +
                                      ty * ((1 - tx) * L(x0, y0 + 1) + tx * L(x0 + 1, y0 + 1));
                    out.at(x, y, c) += amp * v;
                }
            }
        }
        total += amp;
        amp *= 0.5;
    }
    for (double& v : out.data) v /= total;
    // stretch to the full range so 8-bit quantization keeps detail
    double lo = 1.0, hi = 0.0;
    for (double v : out.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double& v : out.data) v = (v - lo) / (hi - lo);
    return out;
}

/// I'(x') = I(H^-1 x'), bilinear with clamp-to-border, same size as the source unless given.
inline Image warp_image(const Image& src, const Homography& H, int out_w = 0, int out_h = 0) {
    const Homography Hinv = H.inverse();
    Image out(out_w > 0 ? out_w : src.width, out_h > 0 ? out_h : src.height, src.channels);
    std::vector<Point2> pt(1);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            try {
                pt[0] = warp_point(Hinv, x, y);
            } catch (const Error&) {
                pt[0] = {0.0, 0.0};
            }
            const Patch p = bilinear_sample(src, pt);
            for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = p.data[c];
        }
    return out;
}

/// v -> v^gamma, optionally inverted (1 - v^gamma); values assumed in [0, 1].
inline Image apply_gamma(const Image& img, double gamma, bool invert) {
    Image out = img;
    for (double& v : out.data) {
        const double g = std::pow(std::clamp(v, 0.0, 1.0), gamma);
        v = invert ? 1.0 - g : g;
    }
    return out;
}

inline Image add_noise(const Image& img, double sigma, std::uint64_t seed) {
    Image out = img;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    for (double& v : out.data) v = std::clamp(v + n(rng), 0.0, 1.0);
    return out;
}

/// T(delta) * H where delta has length fraction * max(w, h) in a seeded random direction.
inline Homography perturb_translation(const Homography& H, double fraction, int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    const double a = angle(rng);
    const double len = fraction * std::max(w, h);
    return Homography::translation(len * std::cos(a), len * std::sin(a)) * H;
}

}  // namespace jalign
