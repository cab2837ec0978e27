#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "jalign/geometry.hpp"
#include "test_support.hpp"

using namespace jalign;
using jalign::testing::rel_err;

namespace {

Homography make_h(double h11, double h12, double h13, double h21, double h22, double h23, double h31 = 0.0,
                  double h32 = 0.0) {
    return Homography::from_row_major({h11, h12, h13, h21, h22, h23, h31, h32, 1.0});
}

}  // namespace

TEST(PsiParameterization, ZeroIsIdentity) {
    PsiParams p;
    p.w = 123;
    p.h = 45;
    p.alpha = 7;
    const Homography H = psi_to_homography(p);
    EXPECT_EQ(H.matrix(), Eigen::Matrix3d::Identity());
}

TEST(PsiParameterization, TranslationComponentScalesWithWidth) {
    PsiParams p;
    p.w = p.h = 100;
    p.psi = {0, 0, 0, 0, 6.4, 0, 0, 0};
    const Homography H = psi_to_homography(p);
    Eigen::Matrix3d expected = Eigen::Matrix3d::Identity();
    expected(0, 2) = 10.0;
    EXPECT_TRUE(H.matrix().isApprox(expected, 1e-15));
}

TEST(PsiParameterization, InverseOfIdentityIsZero) {
    const PsiParams p = homography_to_psi(Homography(), 640, 480);
    for (double v : p.psi) EXPECT_EQ(v, 0.0);
}

TEST(PsiParameterization, PerspectiveComponentScalesByWidth) {
    const PsiParams p = homography_to_psi(make_h(1, 0, 0, 0, 1, 0, 0.001, 0), 200, 100, 64);
    EXPECT_NEAR(p.psi[6], 12.8, 1e-12);
    for (int i : {0, 1, 2, 3, 4, 5, 7}) EXPECT_EQ(p.psi[i], 0.0);
}

TEST(PsiParameterization, RejectsBadDimensionsAndNonFinite) {
    EXPECT_THROW(homography_to_psi(Homography(), 0, 10), Error);
    EXPECT_THROW(homography_to_psi(Homography(), 10, -1), Error);
    EXPECT_THROW(homography_to_psi(Homography(), 10, 10, 0.0), Error);
    PsiParams p;
    p.psi[3] = std::nan("");
    try {
        psi_to_homography(p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidParameter);
    }
}

TEST(PsiParameterization, RoundTripIsExact) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dim(1.0, 4000.0), alpha(0.5, 200.0);
    for (int i = 0; i < 1000; ++i) {
        PsiParams p = jalign::testing::random_psi(rng, dim(rng), dim(rng), 20.0);
        p.alpha = alpha(rng);
        const PsiParams q = homography_to_psi(psi_to_homography(p), p.w, p.h, p.alpha);
        for (int k = 0; k < 8; ++k) EXPECT_NEAR(q.psi[k], p.psi[k], 1e-12 * (1.0 + std::abs(p.psi[k])));
    }
}

// Realistic homographies between 640x480 views: raw entries span many decades, the
// normalized vector does not.
TEST(PsiParameterization, NormalizesFixtureHomographies) {
    const Homography fixtures[] = {
        make_h(0.92, 0.041, 48.0, -0.035, 1.08, -31.0, 1.2e-5, 2.1e-5),
        make_h(1.15, -0.12, -95.0, 0.09, 0.88, 62.0, -3.5e-5, 1.8e-5),
        make_h(0.78, 0.21, 120.0, -0.18, 0.81, 40.0, 8.0e-5, -6.0e-5),
    };
    for (const auto& H : fixtures) {
        const PsiParams p = homography_to_psi(H, 640, 480);
        double raw_min = 1e300, raw_max = 0, psi_min = 1e300, psi_max = 0;
        const auto raw = H.row_major();
        for (int i = 0; i < 8; ++i) {
            raw_min = std::min(raw_min, std::abs(raw[i]));
            raw_max = std::max(raw_max, std::abs(raw[i]));
            psi_min = std::min(psi_min, std::abs(p.psi[i]));
            psi_max = std::max(psi_max, std::abs(p.psi[i]));
        }
        EXPECT_GE(std::log10(raw_max / raw_min), 5.0);
        EXPECT_LE(std::log10(psi_max / psi_min), 2.0);
    }
}

TEST(WarpPoint, Basics) {
    const Point2 a = warp_point(Homography(), 10, 20);
    EXPECT_EQ(a.x, 10);
    EXPECT_EQ(a.y, 20);

    const Point2 b = warp_point(Homography::translation(5, -3), 10, 20);
    EXPECT_DOUBLE_EQ(b.x, 15);
    EXPECT_DOUBLE_EQ(b.y, 17);

    const Point2 c = warp_point(make_h(1, 0, 0, 0, 1, 0, 0.01, 0), 10, 0);
    EXPECT_NEAR(c.x, 10.0 / 1.1, 1e-12);
    EXPECT_NEAR(c.y, 0.0, 1e-15);
}

TEST(WarpPoint, LineAtInfinityThrows) {
    const Homography H = make_h(1, 0, 0, 0, 1, 0, -0.01, 0);
    try {
        warp_point(H, 100, 5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::PointAtInfinity);
    }
}

TEST(WarpKeypoint, IdentityLeavesKeypointUnchanged) {
    const Keypoint k = Keypoint::make(3.5, 7.25, 5.9, 2.5);
    const Keypoint w = warp_keypoint(Homography(), k);
    EXPECT_DOUBLE_EQ(w.x, k.x);
    EXPECT_DOUBLE_EQ(w.y, k.y);
    EXPECT_NEAR(w.phi, k.phi, 1e-14);
    EXPECT_NEAR(w.s, k.s, 1e-14);
}

TEST(WarpKeypoint, RotationAndScale) {
    const Keypoint r = warp_keypoint(make_h(0, -1, 0, 1, 0, 0), Keypoint::make(4, 4, 0.0, 2.0));
    EXPECT_NEAR(r.phi, std::numbers::pi / 2, 1e-14);
    EXPECT_NEAR(r.s, 2.0, 1e-14);

    const Keypoint s = warp_keypoint(make_h(2, 0, 0, 0, 2, 0), Keypoint::make(4, 4, 0.3, 1.5));
    EXPECT_NEAR(s.phi, 0.3, 1e-14);
    EXPECT_NEAR(s.s, 3.0, 1e-14);
}

TEST(WarpKeypoint, DegenerateFrameThrows) {
    // singular linear part maps the frame vector to zero
    const Homography H = make_h(1, 0, 0, 0, 0, 0);
    try {
        warp_keypoint(H, Keypoint::make(1, 1, std::numbers::pi / 2, 1.0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateFrame);
    }
}

TEST(WarpKeypoint, AngleNormalization) {
    EXPECT_NEAR(Keypoint::make(0, 0, -std::numbers::pi / 2, 1).phi, 1.5 * std::numbers::pi, 1e-15);
    EXPECT_NEAR(Keypoint::make(0, 0, 5 * std::numbers::pi, 1).phi, std::numbers::pi, 1e-12);
    EXPECT_THROW(Keypoint::make(0, 0, 0, 0), Error);
}

// For affine maps the linearized frame transport is exact: compare with mapping the
// frame vector's endpoint directly.
TEST(WarpKeypoint, AffineMatchesEndpointTransport) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1), pos(0, 500), ang(0, 2 * std::numbers::pi), sc(1, 16);
    for (int i = 0; i < 500; ++i) {
        const Homography H = make_h(1 + 0.5 * u(rng), 0.5 * u(rng), 50 * u(rng), 0.5 * u(rng), 1 + 0.5 * u(rng),
                                    50 * u(rng));
        const Keypoint k = Keypoint::make(pos(rng), pos(rng), ang(rng), sc(rng));
        const Keypoint w = warp_keypoint(H, k);
        const Point2 a = warp_point(H, k.x, k.y);
        const Point2 b = warp_point(H, k.x + k.s * std::cos(k.phi), k.y + k.s * std::sin(k.phi));
        const double s = std::hypot(b.x - a.x, b.y - a.y);
        const double phi = normalize_angle(std::atan2(b.y - a.y, b.x - a.x));
        EXPECT_LT(std::abs(w.s - s) / s, 1e-9);
        const double dphi = std::remainder(w.phi - phi, 2 * std::numbers::pi);
        EXPECT_LT(std::abs(dphi), 1e-9);
    }
}

TEST(WarpJacobian, AnalyticAtIdentity) {
    PsiParams p;
    p.w = p.h = 100;
    const Jacobian2x8 J = warp_point_jacobian_psi(p, 0, 0);
    for (int c : {0, 1, 2, 3, 6, 7}) EXPECT_EQ(J.col(c).norm(), 0.0) << c;
    EXPECT_DOUBLE_EQ(J(0, 4), 1.5625);
    EXPECT_DOUBLE_EQ(J(1, 4), 0.0);
    EXPECT_DOUBLE_EQ(J(1, 5), 1.5625);
}

TEST(WarpJacobian, CoordinateSwapPermutesEntries) {
    PsiParams p;
    p.w = p.h = 100;
    const Jacobian2x8 a = warp_point_jacobian_psi(p, 13, 29);
    const Jacobian2x8 b = warp_point_jacobian_psi(p, 29, 13);
    // swapping x and y swaps the output rows and the psi columns 0<->3, 1<->2, 4<->5, 6<->7
    const int col_swap[8] = {3, 2, 1, 0, 5, 4, 7, 6};
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(a(r, c), b(1 - r, col_swap[c])) << r << "," << c;
}

TEST(WarpJacobian, MatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> pos(0, 300), ang(0, 2 * std::numbers::pi), sc(1, 16);
    const double h = 1e-4;
    for (int trial = 0; trial < 50; ++trial) {
        const PsiParams p = jalign::testing::random_psi(rng, 320, 240, 3.0);
        const Keypoint k = Keypoint::make(pos(rng), pos(rng) * 0.8, ang(rng), sc(rng));
        const Jacobian4x8 J = warp_frame_jacobian_psi(p, k);
        for (int c = 0; c < 8; ++c) {
            PsiParams lo = p, hi = p;
            lo.psi[c] -= h;
            hi.psi[c] += h;
            const WarpedFrame a = warp_frame(psi_to_homography(hi), k);
            const WarpedFrame b = warp_frame(psi_to_homography(lo), k);
            const double fd[4] = {(a.x - b.x) / (2 * h), (a.y - b.y) / (2 * h), (a.v0 - b.v0) / (2 * h),
                                  (a.v1 - b.v1) / (2 * h)};
            for (int r = 0; r < 4; ++r) EXPECT_LT(rel_err(J(r, c), fd[r]), 1e-5) << "row " << r << " col " << c;
        }
    }
}

TEST(RescaleHomography, Examples) {
    EXPECT_TRUE(rescale_homography(Homography(), 3.0, 0.5).matrix().isApprox(Eigen::Matrix3d::Identity()));
    const Homography T = rescale_homography(Homography::translation(5, 0), 2, 2);
    EXPECT_DOUBLE_EQ(T(0, 2), 10.0);
    EXPECT_DOUBLE_EQ(T(1, 2), 0.0);
    EXPECT_THROW(rescale_homography(Homography(), 0.0, 1.0), Error);
}

TEST(RescaleHomography, AgreesWithScaledWarp) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> pos(0, 200);
    for (int i = 0; i < 100; ++i) {
        const Homography H = psi_to_homography(jalign::testing::random_psi(rng, 200, 150, 3.0));
        const Homography R = rescale_homography(H, 2, 2);
        const double x = pos(rng), y = pos(rng);
        const Point2 a = warp_point(R, 2 * x, 2 * y);
        const Point2 b = warp_point(H, x, y);
        EXPECT_NEAR(a.x, 2 * b.x, 1e-9 * (1 + std::abs(a.x)));
        EXPECT_NEAR(a.y, 2 * b.y, 1e-9 * (1 + std::abs(a.y)));
    }
}

TEST(Homography, InverseAndComposition) {
    const Homography H = make_h(0.9, 0.1, 4, -0.05, 1.1, -2, 1e-4, -2e-4);
    const Homography I = H * H.inverse();
    EXPECT_TRUE(I.matrix().isApprox(Eigen::Matrix3d::Identity(), 1e-12));
    EXPECT_FALSE(make_h(1, 1, 0, 1, 1, 0).invertible());
}
