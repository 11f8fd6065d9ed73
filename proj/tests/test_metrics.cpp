#include "deepsim/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "deepsim/data.hpp"
#include "deepsim/tensor.hpp"

using namespace deepsim;

namespace {

// Independent NCC oracle coded straight from the patch formula: cosine of the
// mean-centered vectors, accumulated in double. Test-only; shares nothing with
// the conv-based production path.
double ncc_patch_reference(const std::vector<double>& a, const std::vector<double>& b,
                           double eps) {
    std::size_t n = a.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double ca = a[i] - ma, cb = b[i] - mb;
        dot += ca * cb;
        na += ca * ca;
        nb += cb * cb;
    }
    double den = std::sqrt(na * nb);
    den = std::max(den, eps * static_cast<double>(n));
    return dot / den;
}

Tensor image_from(const std::vector<double>& v, int H, int W) {
    std::vector<real> r(v.begin(), v.end());
    return Tensor::from_values({1, 1, H, W}, std::move(r));
}

}  // namespace

TEST(Mse, IdenticalImagesGiveZero) {
    Rng rng(1);
    Tensor a = Tensor::uniform({1, 1, 6, 6}, rng, 0, 1);
    EXPECT_FLOAT_EQ(mse(a, a).item(), real(0));
}

TEST(Mse, DirectArithmetic) {
    Tensor a = image_from({0, 1, 1, 0}, 2, 2);
    Tensor b = image_from({1, 1, 0, 0}, 2, 2);
    EXPECT_FLOAT_EQ(mse(a, b).item(), real(0.5));
}

TEST(Mse, Symmetric) {
    Rng rng(2);
    Tensor a = Tensor::uniform({1, 1, 5, 5}, rng, 0, 1);
    Tensor b = Tensor::uniform({1, 1, 5, 5}, rng, 0, 1);
    EXPECT_FLOAT_EQ(mse(a, b).item(), mse(b, a).item());
}

TEST(Mse, ShapeMismatchRejected) {
    EXPECT_THROW(mse(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 4, 5})),
                 std::invalid_argument);
}

TEST(Ncc, PerfectCorrelationIsOne) {
    Rng rng(3);
    Tensor a = Tensor::uniform({1, 1, 12, 12}, rng, 0, 1);
    EXPECT_NEAR(ncc(a, a, 9).item(), 1.0, 1e-5);
}

TEST(Ncc, PerfectAntiCorrelationIsMinusOne) {
    Rng rng(4);
    Tensor a = Tensor::uniform({1, 1, 12, 12}, rng, 0, 1);
    Tensor b = add(scalar_mul(a, real(-1)), Tensor::full(a.shape(), real(0.8)));
    EXPECT_NEAR(ncc(a, b, 9).item(), -1.0, 1e-5);
}

TEST(Ncc, ConstantWindowsContributeZero) {
    Tensor a = Tensor::full({1, 1, 5, 5}, real(0.4));
    Tensor b = Tensor::full({1, 1, 5, 5}, real(0.9));
    EXPECT_FLOAT_EQ(ncc(a, b, 5).item(), real(0));
}

TEST(Ncc, WindowLargerThanImageRejected) {
    EXPECT_THROW(ncc(Tensor::zeros({1, 1, 6, 6}), Tensor::zeros({1, 1, 6, 6}), 9),
                 std::invalid_argument);
}

TEST(Ncc, MatchesIndependentCosineFormulaOnRandomPatches) {
    // Eq.3-vs-Eq.4 identity: conv-based path vs mean-center/cosine oracle.
    Rng rng(5);
    std::uniform_real_distribution<double> uni(0, 1);
    const int w = 9;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(w * w), b(w * w);
        for (auto& v : a) v = uni(rng);
        for (auto& v : b) v = uni(rng);
        double expect = ncc_patch_reference(a, b, 1e-5);
        double got = ncc(image_from(a, w, w), image_from(b, w, w), w).item();
        EXPECT_NEAR(got, expect, 1e-5) << "trial " << trial;
    }
}

TEST(Ncc, InvariantToPositiveAffineIntensityChange) {
    Rng rng(6);
    Tensor a = Tensor::uniform({1, 1, 16, 16}, rng, 0, 1);
    Tensor b = Tensor::uniform({1, 1, 16, 16}, rng, 0, 1);
    double base = ncc(a, b, 9).item();
    Tensor a2 = add(scalar_mul(a, real(2.3)), Tensor::full(a.shape(), real(0.4)));
    EXPECT_NEAR(ncc(a2, b, 9).item(), base, 1e-4);
    Tensor b2 = add(scalar_mul(b, real(0.5)), Tensor::full(b.shape(), real(-0.2)));
    EXPECT_NEAR(ncc(a, b2, 9).item(), base, 1e-4);
}

TEST(NccSupervised, IdenticalImagesAndLabelsGiveTwo) {
    Rng rng(7);
    Tensor img = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    LabelMap labels(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) labels.at(y, x) = (x < 4) ? 1 : 0;
    Tensor oh = one_hot(labels, 2);
    EXPECT_NEAR(ncc_supervised(img, img, oh, oh, 1, 5).item(), 2.0, 1e-4);
}

TEST(NccSupervised, GammaZeroReducesToNcc) {
    Rng rng(8);
    Tensor a = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    Tensor b = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    LabelMap la(8, 8), lb(8, 8);
    for (int i = 0; i < 32; ++i) la.v[static_cast<std::size_t>(i)] = 1;
    for (int i = 32; i < 64; ++i) lb.v[static_cast<std::size_t>(i)] = 1;
    Tensor oa = one_hot(la, 2), ob = one_hot(lb, 2);
    EXPECT_FLOAT_EQ(ncc_supervised(a, b, oa, ob, 0, 5).item(), ncc(a, b, 5).item());
}

TEST(NccSupervised, DisjointSingleClassDiceTermIsZero) {
    LabelMap la(4, 4), lb(4, 4);
    la.at(0, 0) = 1;
    la.at(0, 1) = 1;
    lb.at(3, 2) = 1;
    lb.at(3, 3) = 1;
    Tensor dice_c1 = soft_dice(slice_channels(one_hot(la, 2), 1, 2),
                               slice_channels(one_hot(lb, 2), 1, 2));
    EXPECT_NEAR(dice_c1.item(), 0.0, 1e-6);
}

TEST(NccSupervised, RejectsUnnormalizedLabels) {
    Rng rng(9);
    Tensor img = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    Tensor bad = Tensor::full({1, 2, 8, 8}, real(0.9));
    EXPECT_THROW(ncc_supervised(img, img, bad, bad, 1, 5), std::invalid_argument);
}

TEST(Deepsim, IdenticalInputsGiveOne) {
    Rng rng(10);
    Tensor w1 = Tensor::randn({4, 1, 3, 3}, rng, real(0.4));
    Tensor b1 = Tensor::uniform({4}, rng, real(0.05), real(0.2));
    FeatureFn extractor = [&](const Tensor& img) {
        FeaturePyramid f;
        Tensor h = leaky_relu(conv2d(img, w1, b1, 1), real(0.2));
        f.push_back(h);
        f.push_back(pool_avg2x2(h));
        return f;
    };
    Tensor img = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    EXPECT_NEAR(deepsim::deepsim(img, img, extractor).item(), 1.0, 1e-4);
}

TEST(Deepsim, ResultAlwaysInMinusOneOne) {
    Rng rng(11);
    Tensor w1 = Tensor::randn({3, 1, 3, 3}, rng, real(1.0));
    FeatureFn extractor = [&](const Tensor& img) {
        return FeaturePyramid{conv2d(img, w1, 1)};
    };
    for (int i = 0; i < 20; ++i) {
        Tensor a = Tensor::uniform({1, 1, 8, 8}, rng, -3, 3);
        Tensor b = Tensor::uniform({1, 1, 8, 8}, rng, -3, 3);
        double v = deepsim::deepsim(a, b, extractor).item();
        EXPECT_GE(v, -1.0 - 1e-6);
        EXPECT_LE(v, 1.0 + 1e-6);
    }
}

TEST(Deepsim, IdentityExtractorReducesToRawPixelCosine) {
    // A single-stage, 1x1-identity-conv extractor makes deepsim the mean
    // per-pixel cosine of raw intensities, which for 1-channel inputs is the
    // mean of sign agreements |a||b|/(|a||b|) = sign(ab).
    Tensor id_kernel = Tensor::from_values({1, 1, 1, 1}, {1});
    FeatureFn extractor = [&](const Tensor& img) {
        return FeaturePyramid{conv2d(img, id_kernel, 0)};
    };
    Rng rng(12);
    Tensor a = Tensor::uniform({1, 1, 6, 6}, rng, real(0.1), 1);
    Tensor b = Tensor::uniform({1, 1, 6, 6}, rng, real(0.1), 1);
    double got = deepsim::deepsim(a, b, extractor).item();

    double expect = 0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        double x = a.values()[i], y = b.values()[i];
        expect += (x * y) / std::max(std::abs(x) * std::abs(y), 1e-5 * 1e-5);
    }
    expect /= static_cast<double>(a.values().size());
    EXPECT_NEAR(got, expect, 1e-4);
}

TEST(Deepsim, InvariantToPerturbationsTheExtractorIgnores) {
    // The extractor zeroes its second input channel, so changing that channel
    // must not change the metric.
    Rng rng(13);
    Tensor w = Tensor::zeros({2, 2, 1, 1});
    w.mutable_values()[0] = 1;  // out0 reads in0; in1 is ignored everywhere
    FeatureFn extractor = [&](const Tensor& img) {
        return FeaturePyramid{conv2d(img, w, 0)};
    };
    Tensor a = Tensor::uniform({1, 2, 6, 6}, rng, real(0.1), 1);
    Tensor b = Tensor::uniform({1, 2, 6, 6}, rng, real(0.1), 1);
    double base = deepsim::deepsim(a, b, extractor).item();

    Tensor a2 = a.clone();
    for (int i = 36; i < 72; ++i)
        a2.mutable_values()[static_cast<std::size_t>(i)] += real(0.5);  // channel 1 only
    EXPECT_FLOAT_EQ(deepsim::deepsim(a2, b, extractor).item(), base);
}

TEST(Deepsim, MissingExtractorRejected) {
    Tensor a = Tensor::zeros({1, 1, 4, 4});
    EXPECT_THROW(deepsim::deepsim(a, a, FeatureFn()), std::invalid_argument);
    MetricSpec spec;
    spec.kind = MetricKind::deepsim_ae;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(DiffusionRegularizer, ZeroFieldCostsNothing) {
    EXPECT_FLOAT_EQ(diffusion_regularizer(DisplacementField::zero(8, 8)).item(), real(0));
}

TEST(DiffusionRegularizer, ConstantTranslationCostsNothing) {
    Tensor u = Tensor::full({1, 2, 8, 8}, real(4.2));
    EXPECT_FLOAT_EQ(diffusion_regularizer(DisplacementField(u)).item(), real(0));
}

TEST(DiffusionRegularizer, UnitGradientFieldCostsOne) {
    // u = (x, 0): d(ux)/dx = 1 everywhere in the interior.
    int H = 10, W = 12;
    std::vector<real> v(static_cast<std::size_t>(2) * H * W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) v[static_cast<std::size_t>(y * W + x)] = static_cast<real>(x);
    Tensor u = Tensor::from_values({1, 2, H, W}, std::move(v));
    EXPECT_NEAR(diffusion_regularizer(DisplacementField(u)).item(), 1.0, 1e-4);
}

TEST(RegistrationLoss, PerfectAlignmentWithMseIsZero) {
    Rng rng(14);
    Tensor img = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    MetricSpec spec;
    spec.kind = MetricKind::mse;
    Tensor loss = registration_loss(img, img, DisplacementField::zero(8, 8), spec, real(7));
    EXPECT_FLOAT_EQ(loss.item(), real(0));
}

TEST(RegistrationLoss, LambdaZeroIsPureNegatedMetric) {
    Rng rng(15);
    Tensor moving = Tensor::uniform({1, 1, 12, 12}, rng, 0, 1);
    Tensor fixed = Tensor::uniform({1, 1, 12, 12}, rng, 0, 1);
    DisplacementField field(Tensor::uniform({1, 2, 12, 12}, rng, real(-0.6), real(0.6)));
    MetricSpec spec;
    spec.kind = MetricKind::ncc;
    Tensor loss = registration_loss(moving, fixed, field, spec, 0);
    Tensor morphed = warp_bilinear(moving, field);
    EXPECT_FLOAT_EQ(loss.item(), -ncc(morphed, fixed, 9).item());
}

TEST(RegistrationLoss, StrictlyIncreasingInLambdaForRoughField) {
    Rng rng(16);
    Tensor moving = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    Tensor fixed = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    DisplacementField rough(Tensor::uniform({1, 2, 8, 8}, rng, -2, 2));
    MetricSpec spec;
    spec.kind = MetricKind::mse;
    double prev = -1e300;
    for (real lambda : {real(0), real(0.1), real(1), real(10)}) {
        double v = registration_loss(moving, fixed, rough, spec, lambda).item();
        EXPECT_GT(v, prev);
        prev = v;
    }
}

TEST(RegistrationLoss, NegativeLambdaRejected) {
    MetricSpec spec;
    spec.kind = MetricKind::mse;
    Tensor img = Tensor::zeros({1, 1, 4, 4});
    EXPECT_THROW(registration_loss(img, img, DisplacementField::zero(4, 4), spec, -1),
                 std::invalid_argument);
}

TEST(RegistrationLoss, OneAdamStepDecreasesLoss) {
    // Sanity descent property with lambda = 0 and a learnable field.
    Rng rng(17);
    Tensor moving = Tensor::uniform({1, 1, 8, 8}, rng, 0, 1);
    DisplacementField gt(Tensor::full({1, 2, 8, 8}, real(0.6)));
    Tensor fixed = warp_bilinear(moving, gt).detach();
    Tensor u = Tensor::zeros({1, 2, 8, 8}, true);
    MetricSpec spec;
    spec.kind = MetricKind::mse;

    Tensor loss0 = registration_loss(moving, fixed, DisplacementField(u), spec, 0);
    loss0.backward();
    std::vector<Tensor> params = {u};
    AdamState adam;
    adam.lr = real(0.05);
    adam_step(params, adam);
    Tensor loss1 = registration_loss(moving, fixed, DisplacementField(u), spec, 0);
    EXPECT_LT(loss1.item(), loss0.item());
}

TEST(MetricSpec, WindowValidation) {
    MetricSpec spec;
    spec.kind = MetricKind::ncc;
    spec.window = 4;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec.window = 1;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec.window = 9;
    spec.validate();
    spec.extractor = [](const Tensor& t) { return FeaturePyramid{t}; };
    EXPECT_THROW(spec.validate(), std::invalid_argument);  // non-deepsim forbids extractor
}
