#include "deepsim/network.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "deepsim/io.hpp"

using namespace deepsim;

namespace {

int conv_param_count(int cin, int cout) { return cout * cin * 9 + cout; }

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(BuildUnet, ParameterCountMatchesHandTally) {
    // 2 stages, channels (4, 8), in 1, out 2, shortcuts on, 3 smoothing convs.
    UNetConfig cfg;
    cfg.stages = 2;
    cfg.channels = {4, 8};
    cfg.in_channels = 1;
    cfg.out_channels = 2;
    cfg.shortcuts = true;
    Rng rng(1);
    Network net = Network::build(cfg, rng);

    // encoder: bn(C_in) + conv(C_in->C) + conv(C->C) per stage
    int expect = 0;
    expect += 2 * 1 + conv_param_count(1, 4) + conv_param_count(4, 4);
    expect += 2 * 4 + conv_param_count(4, 8) + conv_param_count(8, 8);
    // decoder level 1: upsample-conv(8->8), then concat skip -> conv(16->8)
    expect += conv_param_count(8, 8) + conv_param_count(16, 8);
    // decoder level 0: conv(8->4), concat -> conv(8->4)
    expect += conv_param_count(8, 4) + conv_param_count(8, 4);
    // smoothing: conv(4->4), conv(4->4), conv(4->2)
    expect += conv_param_count(4, 4) + conv_param_count(4, 4) + conv_param_count(4, 2);

    int got = 0;
    for (auto& p : net.parameters()) got += static_cast<int>(p.numel());
    EXPECT_EQ(got, expect);
}

TEST(BuildUnet, ShapePreservation) {
    Rng rng(2);
    Network net = Network::build(segmentation_config(3), rng);
    Tensor x = Tensor::uniform({1, 1, 32, 32}, rng, 0, 1);
    Tensor y = net.forward(x);
    EXPECT_EQ(y.shape(), (Shape{1, 3, 32, 32}));
}

TEST(BuildUnet, SameSeedSameParameters) {
    UNetConfig cfg = autoencoder_config({8, 16});
    Rng r1(42), r2(42);
    Network a = Network::build(cfg, r1);
    Network b = Network::build(cfg, r2);
    auto pa = a.named_parameters();
    auto pb = b.named_parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].first, pb[i].first);
        EXPECT_EQ(pa[i].second.values(), pb[i].second.values());
    }
}

TEST(BuildUnet, InvalidChannelProgressionRejected) {
    UNetConfig cfg;
    cfg.stages = 3;
    cfg.channels = {16, 32};  // wrong length
    Rng rng(3);
    EXPECT_THROW(Network::build(cfg, rng), std::invalid_argument);
    cfg.channels = {16, 0, 64};
    EXPECT_THROW(Network::build(cfg, rng), std::invalid_argument);
}

TEST(BuildUnet, IndivisibleExtentRejected) {
    Rng rng(4);
    Network net = Network::build(autoencoder_config(), rng);
    EXPECT_THROW(net.forward(Tensor::zeros({1, 1, 20, 24})), std::invalid_argument);
}

TEST(ForwardRegistration, OutputShapeAndIdentityStart) {
    Rng rng(5);
    Network net = Network::build(registration_config(), rng);
    Tensor moving = Tensor::uniform({1, 1, 32, 32}, rng, 0, 1);
    Tensor fixed = Tensor::uniform({1, 1, 32, 32}, rng, 0, 1);
    DisplacementField field = forward_registration(net, moving, fixed);
    EXPECT_EQ(field.u.shape(), (Shape{1, 2, 32, 32}));
    // zero-initialized final layer starts at the identity transform
    for (real v : field.u.values()) EXPECT_EQ(v, real(0));
}

TEST(ForwardRegistration, WrongRoleRejected) {
    Rng rng(6);
    Network ae = Network::build(autoencoder_config(), rng);
    Tensor img = Tensor::zeros({1, 1, 32, 32});
    EXPECT_THROW(forward_registration(ae, img, img), std::invalid_argument);
    EXPECT_THROW(forward_segmentation(ae, img), std::invalid_argument);
    Network reg = Network::build(registration_config(), rng);
    EXPECT_THROW(forward_autoencoder(reg, img), std::invalid_argument);
}

TEST(ForwardSegmentation, ChannelDistribution) {
    Rng rng(7);
    Network net = Network::build(segmentation_config(4), rng);
    Tensor x = Tensor::uniform({2, 1, 16, 16}, rng, 0, 1);
    Tensor y = forward_segmentation(net, x);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 16, 16}));
    std::int64_t hw = 256;
    for (int n = 0; n < 2; ++n) {
        for (std::int64_t i = 0; i < hw; ++i) {
            double acc = 0;
            for (int c = 0; c < 4; ++c)
                acc += y.values()[static_cast<std::size_t>((n * 4 + c) * hw + i)];
            EXPECT_NEAR(acc, 1.0, 1e-6);
        }
    }
}

TEST(ForwardAutoencoder, OutputInUnitRange) {
    Rng rng(8);
    Network net = Network::build(autoencoder_config(), rng);
    Tensor x = Tensor::uniform({1, 1, 32, 32}, rng, 0, 1);
    Tensor y = forward_autoencoder(net, x);
    EXPECT_EQ(y.shape(), x.shape());
    for (real v : y.values()) {
        EXPECT_GE(v, real(0));
        EXPECT_LE(v, real(1));
    }
}

TEST(ForwardFeatures, PyramidShapesMatchConfig) {
    Rng rng(9);
    Network net = Network::build(autoencoder_config({16, 32, 64}), rng);
    Tensor x = Tensor::uniform({1, 1, 32, 32}, rng, 0, 1);
    FeaturePyramid f = net.forward_features(x);
    ASSERT_EQ(f.size(), 3u);
    EXPECT_EQ(f[0].shape(), (Shape{1, 16, 32, 32}));
    EXPECT_EQ(f[1].shape(), (Shape{1, 32, 16, 16}));
    EXPECT_EQ(f[2].shape(), (Shape{1, 64, 8, 8}));
}

TEST(ForwardFeatures, EvalDeterminismEvenInTrainMode) {
    Rng rng(10);
    Network net = Network::build(autoencoder_config({8, 16}), rng);
    net.set_train();  // features must still come out of the eval path
    Tensor x = Tensor::uniform({1, 1, 16, 16}, rng, 0, 1);
    FeaturePyramid a = net.forward_features(x);
    FeaturePyramid b = net.forward_features(x);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t l = 0; l < a.size(); ++l) EXPECT_EQ(a[l].values(), b[l].values());
}

TEST(Network, EvalForwardIsDeterministic) {
    Rng rng(11);
    Network net = Network::build(segmentation_config(3, {8, 16}), rng);
    net.set_eval();
    Tensor x = Tensor::uniform({1, 1, 16, 16}, rng, 0, 1);
    EXPECT_EQ(net.forward(x).values(), net.forward(x).values());
}

TEST(Network, TrainModeDropoutPerturbsForward) {
    Rng rng(12);
    UNetConfig cfg = autoencoder_config({8, 16});
    cfg.dropout_p = real(0.5);
    Network net = Network::build(cfg, rng);
    net.set_train();
    Tensor x = Tensor::uniform({1, 1, 16, 16}, rng, 0, 1);
    Tensor a = net.forward(x);
    Tensor b = net.forward(x);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.values().size(); ++i)
        any_diff = any_diff || a.values()[i] != b.values()[i];
    EXPECT_TRUE(any_diff);
}

TEST(Network, FreezeBlocksGradients) {
    Rng rng(13);
    Network net = Network::build(autoencoder_config({8, 16}), rng);
    net.freeze();
    Tensor x = Tensor::uniform({1, 1, 16, 16}, rng, 0, 1, true);
    Tensor y = net.forward(x);
    sum(y).backward();
    EXPECT_TRUE(x.has_grad());  // input still receives gradients
    EXPECT_FALSE(net.any_parameter_grad_populated());
}

TEST(Network, CloneIsDeepAndStateRoundTrips) {
    Rng rng(14);
    Network net = Network::build(segmentation_config(3, {8, 16}), rng);
    Network copy = net.clone();
    auto state = net.state_values();
    net.parameters()[0].mutable_values()[0] += real(7);
    EXPECT_NE(net.parameters()[0].values()[0], copy.parameters()[0].values()[0]);
    net.load_state_values(state);
    EXPECT_EQ(net.parameters()[0].values()[0], copy.parameters()[0].values()[0]);
}

TEST(Network, SaveLoadForwardBitIdentical) {
    Rng rng(15);
    Network net = Network::build(segmentation_config(3, {8, 16}), rng);
    // push the running statistics away from their init so they matter
    net.set_train();
    net.forward(Tensor::uniform({2, 1, 16, 16}, rng, 0, 1));
    net.set_eval();

    std::string path = temp_path("deepsim_net_roundtrip.dsrc");
    save_checkpoint(net, path);
    Network loaded = load_checkpoint(path);
    loaded.set_eval();

    Tensor x = Tensor::uniform({1, 1, 16, 16}, rng, 0, 1);
    EXPECT_EQ(net.forward(x).values(), loaded.forward(x).values());
    std::remove(path.c_str());
}
