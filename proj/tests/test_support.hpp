#pragma once

// Shared helpers for the test suites: finite-difference oracles and random fixtures.

#include <cmath>
#include <functional>
#include <random>

#include "jalign/geometry.hpp"
#include "jalign/image.hpp"

namespace jalign::testing {

/// Central difference of a scalar function of one variable.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / (1.0 + std::abs(analytic));
}

/// Random psi vector of moderate magnitude on a w x h image.
inline PsiParams random_psi(std::mt19937_64& rng, double w, double h, double scale = 2.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    PsiParams p;
    p.w = w;
    p.h = h;
    for (double& v : p.psi) v = u(rng);
    return p;
}

/// Smooth analytic test image: sums of sinusoids, well away from bilinear kinks in value.
inline Image smooth_image(int w, int h, int channels = 1, double phase = 0.0) {
    Image img(w, h, channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(x, y, c) = std::sin(0.31 * x + 0.17 * y + phase + c) + 0.5 * std::cos(0.23 * x - 0.41 * y + 2 * c);
    return img;
}

}  // namespace jalign::testing
