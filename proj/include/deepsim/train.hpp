#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "deepsim/data.hpp"
#include "deepsim/eval.hpp"
#include "deepsim/metrics.hpp"
#include "deepsim/network.hpp"
#include "deepsim/tensor.hpp"

namespace deepsim {

struct TrainConfig {
    int epochs = 50;
    int micro_batch = 1;    // samples per forward pass
    int accumulation = 4;   // passes per optimizer step (effective batch = product)
    real lr = real(1e-4);
    int plateau_patience = 5;
    real lr_decay = 10;
    real min_lr = real(1e-7);
    real lambda = real(0.1);
    MetricSpec metric;
    AffineRanges augment;
    bool augment_enabled = true;
    std::uint64_t seed = 0;
    std::vector<int> channels = {16, 32, 64};
    real dropout_p = real(0.1);

    void validate() const {
        DEEPSIM_CHECK(epochs >= 1, "train: epochs must be >= 1");
        DEEPSIM_CHECK(micro_batch >= 1 && accumulation >= 1,
                      "train: effective batch size must be >= 1");
        DEEPSIM_CHECK(lr > 0 && lr_decay > 1 && min_lr > 0, "train: invalid learning-rate plan");
        DEEPSIM_CHECK(lambda >= 0, "train: lambda must be >= 0");
        DEEPSIM_CHECK(plateau_patience >= 1, "train: plateau patience must be >= 1");
    }
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_dice = std::numeric_limits<double>::quiet_NaN();  // NaN when not applicable
    double lr = 0;
    double seconds = 0;
};

struct TrainLog {
    std::vector<EpochRecord> records;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

struct TrainResult {
    Network net;
    TrainLog log;
};

// ---------------------------------------------------------------------------
// Plateau learning-rate schedule
// ---------------------------------------------------------------------------

// Divides the learning rate by `factor` whenever the best validation loss has
// not improved by a relative 1e-5 for `patience` consecutive epochs; training
// stops once the rate falls below `min_lr`.
class PlateauScheduler {
public:
    PlateauScheduler(real lr0, int patience, real factor, real min_lr)
        : lr_(lr0), patience_(patience), factor_(factor), min_lr_(min_lr) {
        DEEPSIM_CHECK(patience >= 1, "plateau scheduler: patience must be >= 1");
        DEEPSIM_CHECK(factor > 1, "plateau scheduler: factor must be > 1");
    }

    real lr() const { return lr_; }
    bool stopped() const { return stopped_; }
    int decays() const { return decays_; }

    void observe(double val_loss) {
        double rel = (best_ - val_loss) / std::max(std::abs(best_), 1e-12);
        if (first_ || rel >= 1e-5) {
            best_ = val_loss;
            since_improve_ = 0;
            first_ = false;
            return;
        }
        if (++since_improve_ >= patience_) {
            lr_ /= factor_;
            ++decays_;
            since_improve_ = 0;
            if (lr_ < min_lr_) stopped_ = true;
        }
    }

private:
    real lr_;
    int patience_;
    real factor_;
    real min_lr_;
    double best_ = std::numeric_limits<double>::infinity();
    int since_improve_ = 0;
    int decays_ = 0;
    bool first_ = true;
    bool stopped_ = false;
};

struct PlateauReplay {
    real lr = 0;
    bool stopped = false;
    int decays = 0;
};

inline PlateauReplay plateau_replay(const std::vector<double>& val_losses, real lr0, int patience,
                                    real factor, real min_lr) {
    PlateauScheduler sched(lr0, patience, factor, min_lr);
    for (double v : val_losses) {
        sched.observe(v);
        if (sched.stopped()) break;
    }
    return {sched.lr(), sched.stopped(), sched.decays()};
}

// New learning rate implied by a training log's validation-loss history.
inline real plateau_scheduler(const TrainLog& log, real lr0, int patience, real factor,
                              real min_lr) {
    std::vector<double> losses;
    for (const auto& r : log.records) losses.push_back(r.val_loss);
    return plateau_replay(losses, lr0, patience, factor, min_lr).lr;
}

// ---------------------------------------------------------------------------
// Losses shared by the surrogate tasks
// ---------------------------------------------------------------------------

// Per-pixel cross-entropy of predicted class probabilities against one-hot
// targets, averaged over batch and pixels.
inline Tensor cross_entropy(const Tensor& pred_probs, const Tensor& target_onehot) {
    DEEPSIM_CHECK(pred_probs.shape() == target_onehot.shape(), "cross_entropy: shape mismatch ",
                  shape_str(pred_probs.shape()), " vs ", shape_str(target_onehot.shape()));
    Tensor picked = sum_channels(mul(target_onehot, log(clamp_min(pred_probs, real(1e-12)))));
    return scalar_mul(mean(picked), real(-1));
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

// One fresh affine per call, applied identically to the moving image and its
// label channels; the fixed image of the pair stays pristine so evaluation
// targets are stable. Returns detached tensors ready for batching.
struct AugmentedMoving {
    Tensor image;
    Tensor labels_onehot;  // undefined when no labels were given
};

inline AugmentedMoving augment_moving(const Tensor& moving, const Tensor* labels_onehot,
                                      const AffineRanges& ranges, Rng& rng) {
    AffineParams aug = sample_affine(ranges, rng);
    DisplacementField field = affine_to_field(aug, moving.shape()[2], moving.shape()[3]);
    AugmentedMoving out;
    out.image = warp_bilinear(moving, field).detach();
    if (labels_onehot) out.labels_onehot = warp_bilinear(*labels_onehot, field).detach();
    return out;
}

namespace train_detail {

struct ImageItem {
    Tensor image;          // [1,1,H,W]
    Tensor labels_onehot;  // [1,C,H,W]; undefined when unlabeled
};

// Both images of every pair serve as independent images for the surrogate
// tasks.
inline std::vector<ImageItem> image_items(const Dataset& ds, const std::vector<int>& indices,
                                          bool need_labels, int num_classes) {
    std::vector<ImageItem> out;
    for (int idx : indices) {
        const auto& s = ds.sample(idx);
        ImageItem a{s.fixed, Tensor()};
        ImageItem b{s.moving, Tensor()};
        if (need_labels) {
            DEEPSIM_CHECK(s.fixed_labels && s.moving_labels,
                          "dataset sample ", idx, " lacks the label maps this task needs");
            a.labels_onehot = one_hot(*s.fixed_labels, num_classes);
            b.labels_onehot = one_hot(*s.moving_labels, num_classes);
        }
        out.push_back(std::move(a));
        out.push_back(std::move(b));
    }
    return out;
}

inline int dataset_num_classes(const Dataset& ds) {
    int m = 0;
    for (const auto& s : ds.samples) {
        if (s.fixed_labels) m = std::max(m, s.fixed_labels->max_class());
        if (s.moving_labels) m = std::max(m, s.moving_labels->max_class());
    }
    return m + 1;
}

template <typename LossFn>
double run_grouped_epoch(std::vector<int>& order, Rng& rng, int micro_batch, int accumulation,
                         std::vector<Tensor>& params, AdamState& adam, const LossFn& micro_loss) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t group_items = static_cast<std::size_t>(micro_batch) * accumulation;
    std::size_t pos = 0;
    while (pos < order.size()) {
        std::size_t group_end = std::min(order.size(), pos + group_items);
        std::size_t group_size = group_end - pos;
        while (pos < group_end) {
            std::size_t micro_end = std::min(group_end, pos + static_cast<std::size_t>(micro_batch));
            std::vector<int> micro(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                   order.begin() + static_cast<std::ptrdiff_t>(micro_end));
            real scale = static_cast<real>(micro.size()) / static_cast<real>(group_size);
            Tensor loss = micro_loss(micro);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(micro.size());
            scalar_mul(loss, scale).backward();
            pos = micro_end;
        }
        adam_step(params, adam);
        zero_grads(params);
    }
    return loss_sum / static_cast<double>(order.size());
}

}  // namespace train_detail

// Trains the autoencoder surrogate with MSE reconstruction loss. Returns the
// best-validation-loss checkpoint and the per-epoch log.
inline TrainResult train_autoencoder(const Dataset& ds, const TrainConfig& config,
                                     const ProgressFn& progress = {}) {
    config.validate();
    DEEPSIM_CHECK(!ds.samples.empty(), "train_autoencoder: empty dataset");
    DEEPSIM_CHECK(!ds.split.train.empty() && !ds.split.val.empty(),
                  "train_autoencoder: needs nonempty train and val splits");

    Rng rng(config.seed);
    UNetConfig net_cfg = autoencoder_config(config.channels);
    net_cfg.dropout_p = config.dropout_p;
    Network net = Network::build(net_cfg, rng);

    auto train_items = train_detail::image_items(ds, ds.split.train, false, 0);
    auto val_items = train_detail::image_items(ds, ds.split.val, false, 0);

    AdamState adam;
    adam.lr = config.lr;
    auto params = net.parameters();
    PlateauScheduler sched(config.lr, config.plateau_patience, config.lr_decay, config.min_lr);

    TrainLog log;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<real>> best_state = net.state_values();

    std::vector<int> order(train_items.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs && !sched.stopped(); ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        net.set_train();
        adam.lr = sched.lr();
        double train_loss = train_detail::run_grouped_epoch(
            order, rng, config.micro_batch, config.accumulation, params, adam,
            [&](const std::vector<int>& micro) {
                std::vector<Tensor> imgs;
                for (int i : micro) imgs.push_back(train_items[static_cast<std::size_t>(i)].image);
                Tensor x = concat_batch(imgs);
                return mse(net.forward(x), x);
            });

        net.set_eval();
        double val_loss = 0;
        for (std::size_t i = 0; i < val_items.size(); i += static_cast<std::size_t>(config.micro_batch)) {
            std::vector<Tensor> imgs;
            for (std::size_t j = i; j < std::min(val_items.size(), i + static_cast<std::size_t>(config.micro_batch)); ++j)
                imgs.push_back(val_items[j].image);
            Tensor x = concat_batch(imgs);
            val_loss += static_cast<double>(mse(net.forward(x), x).item()) *
                        static_cast<double>(imgs.size());
        }
        val_loss /= static_cast<double>(val_items.size());

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_loss;
        rec.val_loss = val_loss;
        rec.lr = static_cast<double>(sched.lr());
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.records.push_back(rec);
        if (progress) progress(rec);

        if (val_loss < best_val) {
            best_val = val_loss;
            best_state = net.state_values();
        }
        sched.observe(val_loss);
    }

    net.load_state_values(best_state);
    net.set_eval();
    return {std::move(net), std::move(log)};
}

// Trains the segmentation surrogate with per-pixel cross-entropy. The log
// additionally records validation mean Dice. Best-validation-loss checkpoint.
inline TrainResult train_segmentation(const Dataset& ds, const TrainConfig& config,
                                      const ProgressFn& progress = {}) {
    config.validate();
    DEEPSIM_CHECK(!ds.samples.empty(), "train_segmentation: empty dataset");
    DEEPSIM_CHECK(!ds.split.train.empty() && !ds.split.val.empty(),
                  "train_segmentation: needs nonempty train and val splits");
    int num_classes = train_detail::dataset_num_classes(ds);
    DEEPSIM_CHECK(num_classes >= 2, "train_segmentation: dataset has no foreground labels");

    Rng rng(config.seed);
    UNetConfig net_cfg = segmentation_config(num_classes, config.channels);
    net_cfg.dropout_p = config.dropout_p;
    Network net = Network::build(net_cfg, rng);

    auto train_items = train_detail::image_items(ds, ds.split.train, true, num_classes);
    auto val_items = train_detail::image_items(ds, ds.split.val, true, num_classes);

    AdamState adam;
    adam.lr = config.lr;
    auto params = net.parameters();
    PlateauScheduler sched(config.lr, config.plateau_patience, config.lr_decay, config.min_lr);

    TrainLog log;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<real>> best_state = net.state_values();

    std::vector<int> order(train_items.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs && !sched.stopped(); ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        net.set_train();
        adam.lr = sched.lr();
        double train_loss = train_detail::run_grouped_epoch(
            order, rng, config.micro_batch, config.accumulation, params, adam,
            [&](const std::vector<int>& micro) {
                std::vector<Tensor> imgs, labels;
                for (int i : micro) {
                    imgs.push_back(train_items[static_cast<std::size_t>(i)].image);
                    labels.push_back(train_items[static_cast<std::size_t>(i)].labels_onehot);
                }
                return cross_entropy(net.forward(concat_batch(imgs)), concat_batch(labels));
            });

        net.set_eval();
        double val_loss = 0, val_dice = 0;
        for (const auto& item : val_items) {
            Tensor probs = net.forward(item.image);
            val_loss += static_cast<double>(cross_entropy(probs, item.labels_onehot).item());
            val_dice += mean_dice(argmax_channels(probs), argmax_channels(item.labels_onehot),
                                  foreground_classes(num_classes));
        }
        val_loss /= static_cast<double>(val_items.size());
        val_dice /= static_cast<double>(val_items.size());

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_loss;
        rec.val_loss = val_loss;
        rec.val_dice = val_dice;
        rec.lr = static_cast<double>(sched.lr());
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.records.push_back(rec);
        if (progress) progress(rec);

        if (val_loss < best_val) {
            best_val = val_loss;
            best_state = net.state_values();
        }
        sched.observe(val_loss);
    }

    net.load_state_values(best_state);
    net.set_eval();
    return {std::move(net), std::move(log)};
}

// Trains the registration network against D + lambda*R. Gradients of
// `accumulation` micro-batches are summed before each optimizer step. Each
// training pair gets a fresh random affine augmentation composed onto its
// moving image (and label maps), leaving the fixed image pristine so
// validation Dice targets stay stable. Returns the best-validation-mean-Dice
// checkpoint. A deepsim metric requires the frozen extractor network, which
// must stay alive while the result is used.
inline TrainResult train_registration(const Dataset& ds, Network* extractor,
                                      const TrainConfig& config, const ProgressFn& progress = {}) {
    config.validate();
    DEEPSIM_CHECK(!ds.samples.empty(), "train_registration: empty dataset");
    DEEPSIM_CHECK(!ds.split.train.empty() && !ds.split.val.empty(),
                  "train_registration: needs nonempty train and val splits");

    MetricSpec spec = config.metric;
    if (metric_needs_extractor(spec.kind)) {
        DEEPSIM_CHECK(extractor != nullptr, "metric ", metric_name(spec.kind),
                      " requires an extractor network");
        extractor->freeze();
        extractor->set_eval();
        spec.extractor = make_feature_fn(*extractor);
    }
    spec.validate();

    int num_classes = 0;
    if (metric_needs_labels(spec.kind)) {
        num_classes = train_detail::dataset_num_classes(ds);
        DEEPSIM_CHECK(num_classes >= 2, "ncc_sup needs labeled data");
    }

    Rng rng(config.seed);
    UNetConfig net_cfg = registration_config(config.channels);
    net_cfg.dropout_p = config.dropout_p;
    Network net = Network::build(net_cfg, rng);

    AdamState adam;
    adam.lr = config.lr;
    auto params = net.parameters();
    PlateauScheduler sched(config.lr, config.plateau_patience, config.lr_decay, config.min_lr);

    TrainLog log;
    double best_dice = -1;
    std::vector<std::vector<real>> best_state = net.state_values();

    std::vector<int> order(ds.split.train.begin(), ds.split.train.end());

    auto assert_extractor_frozen = [&]() {
        if (extractor && extractor->any_parameter_grad_populated())
            throw std::logic_error(
                "frozen-extractor violation: extractor gradients were populated");
    };

    for (int epoch = 0; epoch < config.epochs && !sched.stopped(); ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        net.set_train();
        adam.lr = sched.lr();
        double train_loss = train_detail::run_grouped_epoch(
            order, rng, config.micro_batch, config.accumulation, params, adam,
            [&](const std::vector<int>& micro) {
                std::vector<Tensor> movings, fixeds, mov_labels, fix_labels;
                for (int idx : micro) {
                    const auto& s = ds.sample(idx);
                    Tensor moving = s.moving;
                    Tensor moving_l1h;
                    if (metric_needs_labels(spec.kind)) {
                        DEEPSIM_CHECK(s.moving_labels && s.fixed_labels, "ncc_sup: sample ", idx,
                                      " lacks labels");
                        moving_l1h = one_hot(*s.moving_labels, num_classes);
                    }
                    if (config.augment_enabled) {
                        AugmentedMoving aug = augment_moving(
                            moving, moving_l1h.defined() ? &moving_l1h : nullptr,
                            config.augment, rng);
                        moving = aug.image;
                        moving_l1h = aug.labels_onehot;
                    }
                    movings.push_back(moving.detach());
                    fixeds.push_back(s.fixed);
                    if (metric_needs_labels(spec.kind)) {
                        mov_labels.push_back(moving_l1h.detach());
                        fix_labels.push_back(one_hot(*s.fixed_labels, num_classes));
                    }
                }
                Tensor moving_b = concat_batch(movings);
                Tensor fixed_b = concat_batch(fixeds);
                DisplacementField field = forward_registration(net, moving_b, fixed_b);
                Tensor loss;
                if (metric_needs_labels(spec.kind)) {
                    Tensor ml = concat_batch(mov_labels);
                    Tensor fl = concat_batch(fix_labels);
                    loss = registration_loss(moving_b, fixed_b, field, spec, config.lambda, &ml,
                                             &fl);
                } else {
                    loss = registration_loss(moving_b, fixed_b, field, spec, config.lambda);
                }
                return loss;
            });
        assert_extractor_frozen();

        net.set_eval();
        double val_loss = 0, val_dice = 0;
        bool have_labels = true;
        for (int idx : ds.split.val) {
            const auto& s = ds.sample(idx);
            DisplacementField field = forward_registration(net, s.moving, s.fixed);
            Tensor loss;
            if (metric_needs_labels(spec.kind)) {
                Tensor ml = one_hot(*s.moving_labels, num_classes);
                Tensor fl = one_hot(*s.fixed_labels, num_classes);
                loss = registration_loss(s.moving, s.fixed, field, spec, config.lambda, &ml, &fl);
            } else {
                loss = registration_loss(s.moving, s.fixed, field, spec, config.lambda);
            }
            val_loss += static_cast<double>(loss.item());
            if (s.moving_labels && s.fixed_labels) {
                LabelMap warped = warp_labels_nn(*s.moving_labels, field);
                int nc = std::max(s.moving_labels->max_class(), s.fixed_labels->max_class()) + 1;
                val_dice += mean_dice(warped, *s.fixed_labels, foreground_classes(nc));
            } else {
                have_labels = false;
            }
        }
        val_loss /= static_cast<double>(ds.split.val.size());
        val_dice = have_labels ? val_dice / static_cast<double>(ds.split.val.size())
                               : std::numeric_limits<double>::quiet_NaN();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_loss;
        rec.val_loss = val_loss;
        rec.val_dice = val_dice;
        rec.lr = static_cast<double>(sched.lr());
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.records.push_back(rec);
        if (progress) progress(rec);

        bool improved = have_labels ? val_dice > best_dice
                                    : -val_loss > best_dice;  // fall back to loss when unlabeled
        if (improved) {
            best_dice = have_labels ? val_dice : -val_loss;
            best_state = net.state_values();
        }
        sched.observe(val_loss);
    }

    net.load_state_values(best_state);
    net.set_eval();
    return {std::move(net), std::move(log)};
}

}  // namespace deepsim
