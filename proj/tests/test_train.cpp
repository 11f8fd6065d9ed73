#include "deepsim/train.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "deepsim/data.hpp"
#include "deepsim/report.hpp"
#include "deepsim/sweep.hpp"

using namespace deepsim;

namespace {

// Tiny dataset and network so these behavioral tests run in seconds.
Dataset tiny_dataset(int n_train = 6, int n_val = 2, int n_test = 2, real noise = real(0.03),
                     std::uint64_t seed = 11) {
    SyntheticConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.radius_lo = 2;
    cfg.radius_hi = 5;
    cfg.blobs_min = 2;
    cfg.blobs_max = 4;
    cfg.deform_amplitude = 2;
    cfg.deform_sigma = 4;
    cfg.noise_sigma = noise;
    cfg.seed = seed;
    return make_synthetic_dataset(cfg, n_train, n_val, n_test);
}

TrainConfig tiny_config(int epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.channels = {4, 8};
    cfg.micro_batch = 2;
    cfg.accumulation = 2;
    cfg.lr = real(1e-3);
    cfg.seed = 5;
    return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plateau scheduling
// ---------------------------------------------------------------------------

TEST(Plateau, StrictImprovementKeepsLr) {
    std::vector<double> losses = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5};
    PlateauReplay r = plateau_replay(losses, real(1e-4), 2, 10, real(1e-7));
    EXPECT_FLOAT_EQ(r.lr, real(1e-4));
    EXPECT_EQ(r.decays, 0);
    EXPECT_FALSE(r.stopped);
}

TEST(Plateau, ConstantLossDecaysExactlyOnceAfterPatience) {
    int patience = 3;
    std::vector<double> losses(static_cast<std::size_t>(patience) + 1, 0.5);
    PlateauReplay r = plateau_replay(losses, real(1e-4), patience, 10, real(1e-7));
    EXPECT_EQ(r.decays, 1);
    EXPECT_FLOAT_EQ(r.lr, real(1e-5));
}

TEST(Plateau, DecaySequenceStopsBelowMinLr) {
    // 1e-4 -> 1e-5 -> 1e-6 -> (1e-7 < min_lr 1e-6) stop after the third decay.
    int patience = 2;
    std::vector<double> losses(1 + 3 * static_cast<std::size_t>(patience), 0.5);
    PlateauReplay r = plateau_replay(losses, real(1e-4), patience, 10, real(1e-6));
    EXPECT_EQ(r.decays, 3);
    EXPECT_TRUE(r.stopped);
    EXPECT_LT(r.lr, real(1e-6));
}

TEST(Plateau, RelativeImprovementThreshold) {
    // improvements below 1e-5 relative count as plateau
    std::vector<double> losses = {1.0, 1.0 - 5e-7, 1.0 - 9e-7};
    PlateauReplay r = plateau_replay(losses, real(1e-4), 2, 10, real(1e-7));
    EXPECT_EQ(r.decays, 1);
}

TEST(Plateau, TrainLogWrapper) {
    TrainLog log;
    for (double v : {0.5, 0.5, 0.5, 0.5}) {
        EpochRecord r;
        r.val_loss = v;
        log.records.push_back(r);
    }
    EXPECT_FLOAT_EQ(plateau_scheduler(log, real(1e-3), 3, 10, real(1e-8)), real(1e-4));
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

TEST(CrossEntropy, PerfectOneHotPredictionIsFree) {
    LabelMap labels(4, 4);
    labels.at(1, 1) = 1;
    labels.at(2, 2) = 2;
    Tensor target = one_hot(labels, 3);
    EXPECT_LE(cross_entropy(target, target).item(), real(1e-4));
}

TEST(CrossEntropy, UniformPredictionCostsLogC) {
    const int C = 5;
    LabelMap labels(4, 4);
    Tensor target = one_hot(labels, C);
    Tensor uniform = Tensor::full({1, C, 4, 4}, real(1) / C);
    EXPECT_NEAR(cross_entropy(uniform, target).item(), std::log(static_cast<double>(C)), 1e-4);
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

TEST(Augment, SameFieldAppliedToImageAndLabels) {
    Rng gen(3);
    SyntheticConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.radius_lo = 2;
    cfg.radius_hi = 5;
    RegistrationSample s = generate_synthetic_pair(cfg, gen);
    Tensor oh = one_hot(*s.moving_labels, cfg.classes);

    AffineRanges ranges;
    Rng r1(42);
    AugmentedMoving aug = augment_moving(s.moving, &oh, ranges, r1);

    // replay the same stream by hand: the identical field must have hit both
    // the image and the label channels (tolerance: FMA contraction may round
    // differently across inlined call sites)
    Rng r2(42);
    AffineParams p = sample_affine(ranges, r2);
    DisplacementField field = affine_to_field(p, 16, 16);
    Tensor img_ref = warp_bilinear(s.moving, field);
    Tensor lab_ref = warp_bilinear(oh, field);
    ASSERT_EQ(aug.image.values().size(), img_ref.values().size());
    for (std::size_t i = 0; i < img_ref.values().size(); ++i)
        EXPECT_NEAR(aug.image.values()[i], img_ref.values()[i], 1e-6);
    ASSERT_EQ(aug.labels_onehot.values().size(), lab_ref.values().size());
    for (std::size_t i = 0; i < lab_ref.values().size(); ++i)
        EXPECT_NEAR(aug.labels_onehot.values()[i], lab_ref.values()[i], 1e-6);
}

// ---------------------------------------------------------------------------
// Training loops: plumbing, determinism, contracts
// ---------------------------------------------------------------------------

TEST(TrainAutoencoder, OneEpochRunProducesOneRecord) {
    TrainResult r = train_autoencoder(tiny_dataset(), tiny_config(1));
    EXPECT_EQ(r.log.records.size(), 1u);
    EXPECT_EQ(r.log.records[0].epoch, 0);
    EXPECT_TRUE(std::isnan(r.log.records[0].val_dice));
}

TEST(TrainAutoencoder, EmptyDatasetRejected) {
    Dataset empty;
    EXPECT_THROW(train_autoencoder(empty, tiny_config(1)), std::invalid_argument);
}

TEST(TrainAutoencoder, BestCheckpointBeatsUntrainedNet) {
    Dataset ds = tiny_dataset(8, 3, 0);
    TrainConfig cfg = tiny_config(6);
    TrainResult r = train_autoencoder(ds, cfg);

    Rng rng(cfg.seed);
    UNetConfig net_cfg = autoencoder_config(cfg.channels);
    net_cfg.dropout_p = cfg.dropout_p;
    Network untrained = Network::build(net_cfg, rng);
    untrained.set_eval();
    r.net.set_eval();

    double before = 0, after = 0;
    for (int idx : ds.split.val) {
        const Tensor& img = ds.sample(idx).fixed;
        before += mse(untrained.forward(img), img).item();
        after += mse(r.net.forward(img), img).item();
    }
    EXPECT_LT(after, before);
}

TEST(TrainAutoencoder, FixedSeedGivesBitIdenticalLog) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(3);
    TrainResult a = train_autoencoder(ds, cfg);
    TrainResult b = train_autoencoder(ds, cfg);
    ASSERT_EQ(a.log.records.size(), b.log.records.size());
    for (std::size_t i = 0; i < a.log.records.size(); ++i) {
        EXPECT_EQ(a.log.records[i].train_loss, b.log.records[i].train_loss);
        EXPECT_EQ(a.log.records[i].val_loss, b.log.records[i].val_loss);
        EXPECT_EQ(a.log.records[i].lr, b.log.records[i].lr);
    }
}

TEST(TrainLogInvariants, EpochsIncreaseLrNonIncreasing) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(4);
    cfg.plateau_patience = 1;
    TrainResult r = train_autoencoder(ds, cfg);
    for (std::size_t i = 1; i < r.log.records.size(); ++i) {
        EXPECT_EQ(r.log.records[i].epoch, r.log.records[i - 1].epoch + 1);
        EXPECT_LE(r.log.records[i].lr, r.log.records[i - 1].lr);
    }
}

TEST(TrainSegmentation, MissingLabelsRejected) {
    Dataset ds = tiny_dataset(4, 2, 0);
    for (auto& s : ds.samples) {
        s.moving_labels.reset();
        s.fixed_labels.reset();
    }
    EXPECT_THROW(train_segmentation(ds, tiny_config(1)), std::invalid_argument);
}

TEST(TrainSegmentation, LogRecordsValidationDice) {
    TrainResult r = train_segmentation(tiny_dataset(), tiny_config(2));
    ASSERT_EQ(r.log.records.size(), 2u);
    for (const auto& rec : r.log.records) {
        EXPECT_FALSE(std::isnan(rec.val_dice));
        EXPECT_GE(rec.val_dice, 0.0);
        EXPECT_LE(rec.val_dice, 1.0);
    }
}

TEST(TrainRegistration, DeepsimRequiresExtractor) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(1);
    cfg.metric.kind = MetricKind::deepsim_ae;
    EXPECT_THROW(train_registration(ds, nullptr, cfg), std::invalid_argument);
}

TEST(TrainRegistration, ExtractorStaysFrozen) {
    Dataset ds = tiny_dataset();
    TrainConfig ae_cfg = tiny_config(2);
    TrainResult extractor = train_autoencoder(ds, ae_cfg);

    std::vector<std::vector<real>> before = extractor.net.state_values();
    TrainConfig cfg = tiny_config(2);
    cfg.metric.kind = MetricKind::deepsim_ae;
    TrainResult reg = train_registration(ds, &extractor.net, cfg);
    EXPECT_EQ(extractor.net.state_values(), before);  // bit-identical
    EXPECT_FALSE(extractor.net.any_parameter_grad_populated());
    EXPECT_FALSE(reg.log.records.empty());
}

TEST(TrainRegistration, HugeLambdaKeepsTransformNearIdentity) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(3);
    cfg.lambda = 1000;
    TrainResult r = train_registration(ds, nullptr, cfg);
    r.net.set_eval();
    double total = 0;
    for (int idx : ds.split.test) {
        const auto& s = ds.sample(idx);
        total += mean_displacement(forward_registration(r.net, s.moving, s.fixed));
    }
    EXPECT_LT(total / static_cast<double>(ds.split.test.size()), 0.5);
}

TEST(TrainRegistration, NccSupervisedRunsAndUsesLabels) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(2);
    cfg.metric.kind = MetricKind::ncc_sup;
    cfg.metric.window = 5;
    TrainResult r = train_registration(ds, nullptr, cfg);
    EXPECT_EQ(r.log.records.size(), 2u);

    Dataset unlabeled = tiny_dataset();
    for (auto& s : unlabeled.samples) {
        s.moving_labels.reset();
        s.fixed_labels.reset();
    }
    EXPECT_THROW(train_registration(unlabeled, nullptr, cfg), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Gradient accumulation = concatenated batch (batch-norm in eval mode)
// ---------------------------------------------------------------------------

TEST(GradientAccumulation, MatchesConcatenatedBatch) {
    Dataset ds = tiny_dataset(4, 1, 0, real(0.02), 29);
    UNetConfig net_cfg = registration_config({4, 8});
    net_cfg.dropout_p = 0;  // keep both paths deterministic
    Rng rng(3);
    Network net_a = Network::build(net_cfg, rng);
    Network net_b = net_a.clone();
    net_a.set_eval();
    net_b.set_eval();
    MetricSpec spec;
    spec.kind = MetricKind::mse;

    // Path A: 4 accumulated micro-batches of one sample each.
    auto params_a = net_a.parameters();
    AdamState adam_a;
    adam_a.lr = real(1e-3);
    for (int idx : ds.split.train) {
        const auto& s = ds.sample(idx);
        DisplacementField field = forward_registration(net_a, s.moving, s.fixed);
        Tensor loss = registration_loss(s.moving, s.fixed, field, spec, real(0.1));
        scalar_mul(loss, real(0.25)).backward();
    }
    adam_step(params_a, adam_a);

    // Path B: one concatenated batch of 4.
    std::vector<Tensor> movings, fixeds;
    for (int idx : ds.split.train) {
        movings.push_back(ds.sample(idx).moving);
        fixeds.push_back(ds.sample(idx).fixed);
    }
    auto params_b = net_b.parameters();
    AdamState adam_b;
    adam_b.lr = real(1e-3);
    Tensor moving_b = concat_batch(movings);
    Tensor fixed_b = concat_batch(fixeds);
    DisplacementField field_b = forward_registration(net_b, moving_b, fixed_b);
    registration_loss(moving_b, fixed_b, field_b, spec, real(0.1)).backward();
    adam_step(params_b, adam_b);

    double max_diff = 0;
    for (std::size_t p = 0; p < params_a.size(); ++p) {
        const auto& va = params_a[p].values();
        const auto& vb = params_b[p].values();
        for (std::size_t i = 0; i < va.size(); ++i)
            max_diff = std::max(max_diff, std::abs(static_cast<double>(va[i]) - vb[i]));
    }
    EXPECT_LE(max_diff, 1e-5);
}

// ---------------------------------------------------------------------------
// Lambda sweep
// ---------------------------------------------------------------------------

TEST(LambdaSweep, SingleElementGridReturnsIt) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(1);
    SweepResult r = lambda_sweep(ds, nullptr, cfg, {real(0.25)});
    EXPECT_FLOAT_EQ(r.best_lambda, real(0.25));
    ASSERT_EQ(r.entries.size(), 1u);
    EXPECT_FLOAT_EQ(r.entries[0].lambda, real(0.25));
}

TEST(LambdaSweep, ReturnsArgmaxAndWellFormedCsv) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(1);
    std::vector<real> grid = {real(0.01), real(0.1), real(1)};
    SweepResult r = lambda_sweep(ds, nullptr, cfg, grid);
    ASSERT_EQ(r.entries.size(), grid.size());
    double best = -1;
    for (const auto& e : r.entries) best = std::max(best, e.val_mean_dice);
    double got = 0;
    for (const auto& e : r.entries)
        if (e.lambda == r.best_lambda) got = e.val_mean_dice;
    EXPECT_EQ(got, best);  // argmax contract

    Csv csv = sweep_csv(r.entries);
    EXPECT_EQ(csv.header, (std::vector<std::string>{"lambda", "val_mean_dice"}));
    EXPECT_EQ(csv.rows.size(), grid.size());
}

TEST(LambdaSweep, EmptyGridRejected) {
    Dataset ds = tiny_dataset();
    EXPECT_THROW(lambda_sweep(ds, nullptr, tiny_config(1), {}), std::invalid_argument);
}
