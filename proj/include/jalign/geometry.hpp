#pragma once

// Planar homographies, the scale-normalized 8-vector used by the optimizer,
// keypoint frames and their transport under a homography.

#include <array>
#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/LU>

#include "jalign/error.hpp"

namespace jalign {

inline constexpr double kPointAtInfinityEps = 1e-9;
inline constexpr double kDegenerateScaleEps = 1e-12;

/// 3x3 projective map with the bottom-right entry fixed to 1.
class Homography {
public:
    Homography() : m_(Eigen::Matrix3d::Identity()) {}

    /// Builds from an arbitrary matrix, dividing through by its bottom-right entry.
    explicit Homography(const Eigen::Matrix3d& m) {
        if (!m.allFinite()) throw Error(ErrorKind::InvalidParameter, "non-finite homography entry");
        const double d = m(2, 2);
        if (std::abs(d) < 1e-12) throw Error(ErrorKind::DegenerateFrame, "homography normalization divisor near zero");
        m_ = m / d;
        m_(2, 2) = 1.0;
    }

    static Homography from_row_major(const std::array<double, 9>& v) {
        Eigen::Matrix3d m;
        m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
        return Homography(m);
    }

    static Homography translation(double tx, double ty) {
        Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
        m(0, 2) = tx;
        m(1, 2) = ty;
        return Homography(m);
    }

    std::array<double, 9> row_major() const {
        return {m_(0, 0), m_(0, 1), m_(0, 2), m_(1, 0), m_(1, 1), m_(1, 2), m_(2, 0), m_(2, 1), m_(2, 2)};
    }

    /// Zero-based (row, col) access.
    double operator()(int r, int c) const { return m_(r, c); }
    const Eigen::Matrix3d& matrix() const { return m_; }

    /// Invertibility after scaling each row to unit max-norm.
    bool invertible() const {
        Eigen::Matrix3d n = m_;
        for (int r = 0; r < 3; ++r) {
            const double s = n.row(r).cwiseAbs().maxCoeff();
            if (s == 0.0) return false;
            n.row(r) /= s;
        }
        return std::abs(n.determinant()) > 1e-12;
    }

    Homography inverse() const {
        if (!invertible()) throw Error(ErrorKind::DegenerateFrame, "homography is singular");
        return Homography(Eigen::Matrix3d(m_.inverse()));
    }

    friend Homography operator*(const Homography& a, const Homography& b) {
        return Homography(Eigen::Matrix3d(a.m_ * b.m_));
    }

private:
    Eigen::Matrix3d m_;
};

/// Scale-normalized homography parameters: zero encodes the identity and every
/// component is dimensionless, so one SGD step size suits all eight.
struct PsiParams {
    std::array<double, 8> psi{};
    double w = 1.0;
    double h = 1.0;
    double alpha = 64.0;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

inline double normalize_angle(double phi) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double a = std::fmod(phi, two_pi);
    if (a < 0.0) a += two_pi;
    if (a >= two_pi) a = 0.0;
    return a;
}

/// Patch sampling frame: position, orientation (radians, [0, 2pi)) and scale (pixels).
struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    double phi = 0.0;
    double s = 1.0;

    static Keypoint make(double x, double y, double phi, double s) {
        if (!(s > 0.0)) throw Error(ErrorKind::InvalidParameter, "keypoint scale must be positive");
        return {x, y, normalize_angle(phi), s};
    }
};

namespace detail {
inline void check_dims(double w, double h, double alpha) {
    if (!(w > 0.0) || !(h > 0.0) || !(alpha > 0.0))
        throw Error(ErrorKind::InvalidParameter, "image dimensions and alpha must be positive");
}
}  // namespace detail

inline Homography psi_to_homography(const PsiParams& p) {
    detail::check_dims(p.w, p.h, p.alpha);
    for (double v : p.psi)
        if (!std::isfinite(v)) throw Error(ErrorKind::InvalidParameter, "non-finite psi component");
    const auto& s = p.psi;
    const double a = p.alpha;
    Eigen::Matrix3d m;
    m << 1.0 + s[0] / a, s[1] / a, p.w * s[4] / a,
         s[2] / a, 1.0 + s[3] / a, p.h * s[5] / a,
         s[6] / (a * p.w), s[7] / (a * p.h), 1.0;
    return Homography(m);
}

inline PsiParams homography_to_psi(const Homography& H, double w, double h, double alpha = 64.0) {
    detail::check_dims(w, h, alpha);
    PsiParams p;
    p.w = w;
    p.h = h;
    p.alpha = alpha;
    p.psi = {alpha * (H(0, 0) - 1.0), alpha * H(0, 1), alpha * H(1, 0), alpha * (H(1, 1) - 1.0),
             alpha * H(0, 2) / w,     alpha * H(1, 2) / h, alpha * H(2, 0) * w, alpha * H(2, 1) * h};
    return p;
}

inline Point2 warp_point(const Homography& H, double x, double y) {
    const double den = H(2, 0) * x + H(2, 1) * y + 1.0;
    if (!(std::abs(den) > kPointAtInfinityEps))
        throw Error(ErrorKind::PointAtInfinity, "projective denominator near zero");
    return {(H(0, 0) * x + H(0, 1) * y + H(0, 2)) / den, (H(1, 0) * x + H(1, 1) * y + H(1, 2)) / den};
}

/// Warped keypoint in vector form: position and the transported frame vector
/// (v0', v1') = s' (cos phi', sin phi').
struct WarpedFrame {
    double x = 0.0;
    double y = 0.0;
    double v0 = 0.0;
    double v1 = 0.0;
};

/// Transports position and the (s cos phi, s sin phi) vector through the
/// linearization of the projective map at the keypoint position.
inline WarpedFrame warp_frame(const Homography& H, const Keypoint& k) {
    const double den = H(2, 0) * k.x + H(2, 1) * k.y + 1.0;
    if (!(std::abs(den) > kPointAtInfinityEps))
        throw Error(ErrorKind::PointAtInfinity, "projective denominator near zero");
    const double v0 = k.s * std::cos(k.phi);
    const double v1 = k.s * std::sin(k.phi);
    return {(H(0, 0) * k.x + H(0, 1) * k.y + H(0, 2)) / den, (H(1, 0) * k.x + H(1, 1) * k.y + H(1, 2)) / den,
            (H(0, 0) * v0 + H(0, 1) * v1) / den, (H(1, 0) * v0 + H(1, 1) * v1) / den};
}

inline Keypoint frame_to_keypoint(const WarpedFrame& f) {
    const double s = std::hypot(f.v0, f.v1);
    if (!(s > kDegenerateScaleEps)) throw Error(ErrorKind::DegenerateFrame, "warped keypoint scale collapsed");
    return {f.x, f.y, normalize_angle(std::atan2(f.v1, f.v0)), s};
}

inline Keypoint warp_keypoint(const Homography& H, const Keypoint& k) {
    return frame_to_keypoint(warp_frame(H, k));
}

using Jacobian2x8 = Eigen::Matrix<double, 2, 8>;
using Jacobian4x8 = Eigen::Matrix<double, 4, 8>;

namespace detail {
/// d h_ij / d psi_k is diagonal; entry k scales psi[k] into its homography slot.
inline std::array<double, 8> psi_scales(const PsiParams& p) {
    const double a = p.alpha;
    return {1.0 / a, 1.0 / a, 1.0 / a, 1.0 / a, p.w / a, p.h / a, 1.0 / (a * p.w), 1.0 / (a * p.h)};
}
}  // namespace detail

/// d(x', y', v0', v1') / d psi for a keypoint frame. Rows 0-1 are the position
/// Jacobian; rows 2-3 differentiate the linearized frame vector.
inline Jacobian4x8 warp_frame_jacobian_psi(const PsiParams& p, const Keypoint& k) {
    const Homography H = psi_to_homography(p);
    const WarpedFrame f = warp_frame(H, k);
    const double den = H(2, 0) * k.x + H(2, 1) * k.y + 1.0;
    const double inv = 1.0 / den;
    const double v0 = k.s * std::cos(k.phi);
    const double v1 = k.s * std::sin(k.phi);

    // Columns in psi order: h11, h12, h21, h22, h13, h23, h31, h32.
    Jacobian4x8 J = Jacobian4x8::Zero();
    J(0, 0) = k.x * inv;
    J(0, 1) = k.y * inv;
    J(0, 4) = inv;
    J(0, 6) = -f.x * k.x * inv;
    J(0, 7) = -f.x * k.y * inv;

    J(1, 2) = k.x * inv;
    J(1, 3) = k.y * inv;
    J(1, 5) = inv;
    J(1, 6) = -f.y * k.x * inv;
    J(1, 7) = -f.y * k.y * inv;

    J(2, 0) = v0 * inv;
    J(2, 1) = v1 * inv;
    J(2, 6) = -f.v0 * k.x * inv;
    J(2, 7) = -f.v0 * k.y * inv;

    J(3, 2) = v0 * inv;
    J(3, 3) = v1 * inv;
    J(3, 6) = -f.v1 * k.x * inv;
    J(3, 7) = -f.v1 * k.y * inv;

    const auto sc = detail::psi_scales(p);
    for (int c = 0; c < 8; ++c) J.col(c) *= sc[c];
    return J;
}

inline Jacobian2x8 warp_point_jacobian_psi(const PsiParams& p, double x, double y) {
    return warp_frame_jacobian_psi(p, Keypoint{x, y, 0.0, 1.0}).topRows<2>();
}

/// S H S^-1 for the coordinate change x_new = sx * x + ox, y_new = sy * y + oy.
inline Homography rescale_homography(const Homography& H, double sx, double sy, double ox = 0.0, double oy = 0.0) {
    if (!(sx > 0.0) || !(sy > 0.0)) throw Error(ErrorKind::InvalidParameter, "rescale factors must be positive");
    Eigen::Matrix3d S;
    S << sx, 0.0, ox, 0.0, sy, oy, 0.0, 0.0, 1.0;
    Eigen::Matrix3d S_inv;
    S_inv << 1.0 / sx, 0.0, -ox / sx, 0.0, 1.0 / sy, -oy / sy, 0.0, 0.0, 1.0;
    return Homography(Eigen::Matrix3d(S * H.matrix() * S_inv));
}

}  // namespace jalign
