#include "deepsim/warp.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace deepsim;

namespace {

Tensor ramp_x(int H, int W) {
    std::vector<real> v(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) v[static_cast<std::size_t>(y * W + x)] = static_cast<real>(x);
    return Tensor::from_values({1, 1, H, W}, std::move(v));
}

DisplacementField constant_field(int H, int W, real ux, real uy) {
    std::vector<real> v(static_cast<std::size_t>(2) * H * W);
    std::fill(v.begin(), v.begin() + H * W, ux);
    std::fill(v.begin() + H * W, v.end(), uy);
    return DisplacementField(Tensor::from_values({1, 2, H, W}, std::move(v)));
}

// u(x,y) = (ax*x + bx*y, ay*x + by*y)
DisplacementField linear_field(int H, int W, real ax, real bx, real ay, real by) {
    std::vector<real> v(static_cast<std::size_t>(2) * H * W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            v[static_cast<std::size_t>(y * W + x)] = ax * static_cast<real>(x) + bx * static_cast<real>(y);
            v[static_cast<std::size_t>(H * W + y * W + x)] =
                ay * static_cast<real>(x) + by * static_cast<real>(y);
        }
    }
    return DisplacementField(Tensor::from_values({1, 2, H, W}, std::move(v)));
}

}  // namespace

TEST(WarpBilinear, IdentityFieldReturnsSourceExactly) {
    Rng rng(1);
    Tensor src = Tensor::uniform({1, 3, 8, 8}, rng, 0, 1);
    Tensor out = warp_bilinear(src, DisplacementField::zero(8, 8));
    for (std::size_t i = 0; i < src.values().size(); ++i)
        EXPECT_EQ(out.values()[i], src.values()[i]);
}

TEST(WarpBilinear, UnitShiftOnRamp) {
    // u = (1,0) on I(x,y) = x gives output x+1 in the interior.
    int H = 6, W = 8;
    Tensor src = ramp_x(H, W);
    Tensor out = warp_bilinear(src, constant_field(H, W, 1, 0));
    for (int y = 0; y < H; ++y)
        for (int x = 0; x + 1 < W; ++x)
            EXPECT_NEAR(out.at({0, 0, y, x}), static_cast<double>(x + 1), 1e-5);
}

TEST(WarpBilinear, IntegerShiftIsExactPixelMove) {
    Rng rng(2);
    Tensor src = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    Tensor out = warp_bilinear(src, constant_field(8, 8, 2, 1));
    for (int y = 0; y + 1 < 8; ++y)
        for (int x = 0; x + 2 < 8; ++x)
            EXPECT_EQ(out.at({0, 0, y, x}), src.at({0, 0, y + 1, x + 2}));
}

TEST(WarpBilinear, LinearInSource) {
    Rng rng(3);
    Tensor a = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    Tensor b = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    DisplacementField u(Tensor::uniform({1, 2, 8, 8}, rng, real(-1.5), real(1.5)));
    Tensor lhs = warp_bilinear(add(scalar_mul(a, real(2)), scalar_mul(b, real(-3))), u);
    Tensor rhs = add(scalar_mul(warp_bilinear(a, u), real(2)),
                     scalar_mul(warp_bilinear(b, u), real(-3)));
    for (std::size_t i = 0; i < lhs.values().size(); ++i)
        EXPECT_NEAR(lhs.values()[i], rhs.values()[i], 1e-5);
}

TEST(WarpBilinear, ShapeMismatchRejected) {
    EXPECT_THROW(warp_bilinear(Tensor::zeros({1, 1, 8, 8}), DisplacementField::zero(4, 4)),
                 std::invalid_argument);
}

TEST(WarpLabelsNN, KeepsLabelsCrisp) {
    LabelMap labels(6, 6);
    for (int y = 2; y < 5; ++y)
        for (int x = 2; x < 5; ++x) labels.at(y, x) = 2;
    LabelMap warped = warp_labels_nn(labels, constant_field(6, 6, 1, 0));
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) EXPECT_TRUE(warped.at(y, x) == 0 || warped.at(y, x) == 2);
    EXPECT_EQ(warped.at(3, 1), labels.at(3, 2));
}

TEST(JacobianDeterminant, IdentityIsOne) {
    Tensor det = jacobian_determinant(DisplacementField::zero(5, 7));
    for (real v : det.values()) EXPECT_FLOAT_EQ(v, real(1));
}

TEST(JacobianDeterminant, UniformExpansionIsFour) {
    // u = (x, y) means Phi = 2p.
    Tensor det = jacobian_determinant(linear_field(6, 6, 1, 0, 0, 1));
    for (int y = 0; y + 1 < 6; ++y)
        for (int x = 0; x + 1 < 6; ++x) EXPECT_NEAR(det.at({0, 0, y, x}), 4.0, 1e-4);
}

TEST(JacobianDeterminant, ReflectionFoldsEverywhere) {
    // u = (-2x, 0) reflects the x axis: det = -1.
    Tensor det = jacobian_determinant(linear_field(6, 6, -2, 0, 0, 0));
    for (int y = 0; y + 1 < 6; ++y)
        for (int x = 0; x + 1 < 6; ++x) EXPECT_NEAR(det.at({0, 0, y, x}), -1.0, 1e-4);
}

TEST(AffineField, IdentityParamsGiveZeroField) {
    AffineParams p;
    DisplacementField f = affine_to_field(p, 6, 8);
    for (real v : f.u.values()) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(AffineField, PureTranslation) {
    AffineParams p;
    p.tx = 3;
    p.ty = 0;
    DisplacementField f = affine_to_field(p, 6, 8);
    std::int64_t hw = 48;
    for (std::int64_t i = 0; i < hw; ++i) {
        EXPECT_NEAR(f.u.values()[static_cast<std::size_t>(i)], 3.0, 1e-6);
        EXPECT_NEAR(f.u.values()[static_cast<std::size_t>(hw + i)], 0.0, 1e-6);
    }
}

TEST(AffineField, ScalingMatchesAnalyticJacobian) {
    AffineParams p;
    p.a11 = 2;
    p.a22 = 2;
    Tensor det = jacobian_determinant(affine_to_field(p, 8, 8));
    for (int y = 0; y + 1 < 8; ++y)
        for (int x = 0; x + 1 < 8; ++x) EXPECT_NEAR(det.at({0, 0, y, x}), 4.0, 1e-4);
}

TEST(AffineField, InteriorDeterminantEqualsDetA) {
    Rng rng(4);
    AffineRanges ranges;
    for (int i = 0; i < 10; ++i) {
        AffineParams p = sample_affine(ranges, rng);
        ASSERT_GT(p.det(), 0);
        Tensor det = jacobian_determinant(affine_to_field(p, 16, 16));
        for (int y = 0; y + 1 < 16; ++y)
            for (int x = 0; x + 1 < 16; ++x)
                EXPECT_NEAR(det.at({0, 0, y, x}), static_cast<double>(p.det()), 1e-4);
    }
}

TEST(RandomSmoothField, ZeroAmplitudeIsZeroField) {
    Rng rng(5);
    DisplacementField f = random_smooth_field(rng, 16, 16, 0, 4);
    for (real v : f.u.values()) EXPECT_EQ(v, real(0));
}

TEST(RandomSmoothField, MaxNormEqualsAmplitude) {
    Rng rng(6);
    DisplacementField f = random_smooth_field(rng, 32, 32, real(5.5), 6);
    std::int64_t hw = 32 * 32;
    double max_norm = 0;
    for (std::int64_t i = 0; i < hw; ++i) {
        double a = f.u.values()[static_cast<std::size_t>(i)];
        double b = f.u.values()[static_cast<std::size_t>(hw + i)];
        max_norm = std::max(max_norm, std::sqrt(a * a + b * b));
    }
    EXPECT_NEAR(max_norm, 5.5, 1e-5);
}

TEST(RandomSmoothField, FixedSeedReproducesBitIdentically) {
    Rng r1(7), r2(7);
    DisplacementField a = random_smooth_field(r1, 16, 16, 3, 4);
    DisplacementField b = random_smooth_field(r2, 16, 16, 3, 4);
    EXPECT_EQ(a.u.values(), b.u.values());
}

TEST(InvertField, ComposesToNearIdentity) {
    Rng rng(8);
    DisplacementField u = random_smooth_field(rng, 32, 32, 4, 8);
    DisplacementField v = invert_field(u);
    // Phi_u(Phi_v(p)) should be close to p away from the border.
    std::int64_t hw = 32 * 32;
    const real* ux = u.u.values().data();
    const real* uy = ux + hw;
    const real* vx = v.u.values().data();
    const real* vy = vx + hw;
    double worst = 0;
    for (int y = 6; y < 26; ++y) {
        for (int x = 6; x < 26; ++x) {
            std::int64_t i = y * 32 + x;
            real px = static_cast<real>(x) + vx[i];
            real py = static_cast<real>(y) + vy[i];
            double qx = px + detail::bilinear_sample(ux, 32, 32, px, py);
            double qy = py + detail::bilinear_sample(uy, 32, 32, px, py);
            worst = std::max({worst, std::abs(qx - x), std::abs(qy - y)});
        }
    }
    EXPECT_LT(worst, 0.35);
}

TEST(MeanDisplacement, SimpleAverage) {
    EXPECT_NEAR(mean_displacement(constant_field(4, 4, 3, 4)), 5.0, 1e-6);
}
