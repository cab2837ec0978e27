#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "jalign/error.hpp"

namespace jalign {

/// Row-major, channel-interleaved float raster. Pixel (x, y) sits at coordinate (x, y).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
        if (w < 1 || h < 1 || c < 1) throw Error(ErrorKind::InvalidInput, "image dimensions must be positive");
    }

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    int longer_side() const { return std::max(width, height); }
    bool valid() const {
        return width > 0 && height > 0 && channels > 0 &&
               data.size() == static_cast<std::size_t>(width) * height * channels;
    }
};

struct ImageStats {
    double mean = 0.0;
    double stddev = 0.0;
};

inline ImageStats image_stats(const Image& img) {
    const double n = static_cast<double>(img.data.size());
    double mean = 0.0;
    for (double v : img.data) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : img.data) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / n)};
}

/// Zero mean, unit (population) standard deviation over all channels jointly.
inline Image normalize_image(const Image& raw) {
    if (!raw.valid() || raw.data.size() < 2) throw Error(ErrorKind::InvalidInput, "image needs at least two samples");
    const ImageStats st = image_stats(raw);
    if (!(st.stddev > 1e-12)) throw Error(ErrorKind::ZeroVariance, "image has zero variance");
    Image out = raw;
    for (double& v : out.data) v = (v - st.mean) / st.stddev;
    return out;
}

struct Pyramid {
    std::vector<Image> levels;  // finest first
    double scale_factor = 2.0;

    std::size_t size() const { return levels.size(); }
};

namespace detail {

/// Area-weighted box average of `factor` fine pixels per coarse pixel along one axis.
/// Fine pixel j covers [j, j+1); samples past the border repeat the edge pixel.
struct AxisTaps {
    std::vector<std::vector<std::pair<int, double>>> taps;
};

inline AxisTaps box_taps(int fine, int coarse, double factor) {
    AxisTaps t;
    t.taps.resize(coarse);
    for (int i = 0; i < coarse; ++i) {
        const double lo = factor * i;
        const double hi = factor * (i + 1);
        for (int j = static_cast<int>(std::floor(lo)); j < hi; ++j) {
            const double w = (std::min(hi, j + 1.0) - std::max(lo, static_cast<double>(j))) / factor;
            if (w <= 0.0) continue;
            t.taps[i].emplace_back(std::clamp(j, 0, fine - 1), w);
        }
    }
    return t;
}

inline Image downsample(const Image& img, double factor) {
    const int cw = std::max(1, static_cast<int>(std::lround(img.width / factor)));
    const int ch = std::max(1, static_cast<int>(std::lround(img.height / factor)));
    const AxisTaps tx = box_taps(img.width, cw, factor);
    const AxisTaps ty = box_taps(img.height, ch, factor);

    Image rows(cw, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < cw; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (auto [j, w] : tx.taps[x]) acc += w * img.at(j, y, c);
                rows.at(x, y, c) = acc;
            }
    Image out(cw, ch, img.channels);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (auto [j, w] : ty.taps[y]) acc += w * rows.at(x, j, c);
                out.at(x, y, c) = acc;
            }
    return out;
}

}  // namespace detail

/// Level 0 is `img`; each further level box-averages `factor` x `factor` blocks.
/// Pixel i of level k is centred at factor^k * i + (factor^k - 1) / 2 in level-0 coordinates.
inline Pyramid build_pyramid(const Image& img, double factor, int min_size) {
    if (!(factor > 1.0)) throw Error(ErrorKind::InvalidParameter, "pyramid factor must exceed 1");
    if (min_size < 8) throw Error(ErrorKind::InvalidParameter, "pyramid min_size must be at least 8");
    Pyramid p;
    p.scale_factor = factor;
    p.levels.push_back(img);
    for (;;) {
        const Image& last = p.levels.back();
        const int next_long = std::max(1, static_cast<int>(std::lround(last.longer_side() / factor)));
        if (next_long < min_size) break;
        p.levels.push_back(detail::downsample(last, factor));
    }
    return p;
}

/// Per-pixel gradient magnitude from central differences (one-sided at borders), max over channels.
inline Image gradient_magnitude_map(const Image& img) {
    Image out(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y) {
        const int ym = std::max(0, y - 1), yp = std::min(img.height - 1, y + 1);
        for (int x = 0; x < img.width; ++x) {
            const int xm = std::max(0, x - 1), xp = std::min(img.width - 1, x + 1);
            double best = 0.0;
            for (int c = 0; c < img.channels; ++c) {
                const double gx = xp > xm ? (img.at(xp, y, c) - img.at(xm, y, c)) / (xp - xm) : 0.0;
                const double gy = yp > ym ? (img.at(x, yp, c) - img.at(x, ym, c)) / (yp - ym) : 0.0;
                best = std::max(best, std::hypot(gx, gy));
            }
            out.at(x, y) = best;
        }
    }
    return out;
}

}  // namespace jalign
