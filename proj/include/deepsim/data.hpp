#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "deepsim/label_map.hpp"
#include "deepsim/tensor.hpp"
#include "deepsim/warp.hpp"

namespace deepsim {

// One registration task: align `moving` onto `fixed`. Synthetic samples carry
// the generating deformation and label maps; external data may omit both.
struct RegistrationSample {
    Tensor moving;  // [1,1,H,W], intensities in [0,1]
    Tensor fixed;
    std::optional<LabelMap> moving_labels;
    std::optional<LabelMap> fixed_labels;
    std::optional<DisplacementField> ground_truth_field;

    int height() const { return moving.shape()[2]; }
    int width() const { return moving.shape()[3]; }
};

struct SyntheticConfig {
    int height = 64;
    int width = 64;
    int classes = 3;  // including background class 0
    int blobs_min = 5;
    int blobs_max = 9;
    real radius_lo = 4;
    real radius_hi = 9;
    real noise_sigma = real(0.05);
    real deform_amplitude = 6;  // px, max displacement-vector norm
    real deform_sigma = 8;      // px, smoothness of the deformation
    std::uint64_t seed = 0;

    void validate(int stages = 3) const {
        int div = 1 << stages;
        DEEPSIM_CHECK(height % div == 0 && width % div == 0, "synthetic extents ", height, "x",
                      width, " must be divisible by 2^stages = ", div);
        DEEPSIM_CHECK(classes >= 2, "synthetic data needs at least one foreground class");
        DEEPSIM_CHECK(blobs_min >= 1 && blobs_max >= blobs_min, "invalid blob count range");
        DEEPSIM_CHECK(radius_lo > 0 && radius_hi >= radius_lo, "invalid blob radius range");
        DEEPSIM_CHECK(noise_sigma >= 0, "noise_sigma must be >= 0");
        DEEPSIM_CHECK(deform_amplitude >= 0 && deform_sigma > 0, "invalid deformation parameters");
    }
};

struct DatasetSplit {
    std::vector<int> train, val, test;
};

struct Dataset {
    std::vector<RegistrationSample> samples;
    DatasetSplit split;

    const RegistrationSample& sample(int idx) const {
        return samples[static_cast<std::size_t>(idx)];
    }
};

// ---------------------------------------------------------------------------
// Label helpers
// ---------------------------------------------------------------------------

inline Tensor one_hot(const LabelMap& labels, int num_classes) {
    DEEPSIM_CHECK(labels.max_class() < num_classes, "label index ", labels.max_class(),
                  " out of range for ", num_classes, " classes");
    int H = labels.height, W = labels.width;
    std::int64_t hw = std::int64_t(H) * W;
    std::vector<real> v(static_cast<std::size_t>(num_classes) * hw, real(0));
    for (std::int64_t i = 0; i < hw; ++i)
        v[static_cast<std::size_t>(std::int64_t(labels.v[static_cast<std::size_t>(i)]) * hw + i)] =
            real(1);
    return Tensor::from_values({1, num_classes, H, W}, std::move(v));
}

inline LabelMap argmax_channels(const Tensor& t) {
    DEEPSIM_CHECK(t.shape().size() == 4 && t.shape()[0] == 1, "argmax_channels expects [1,C,H,W]");
    int C = t.shape()[1], H = t.shape()[2], W = t.shape()[3];
    std::int64_t hw = std::int64_t(H) * W;
    const auto& v = t.values();
    LabelMap out(H, W);
    for (std::int64_t i = 0; i < hw; ++i) {
        int best = 0;
        real best_v = v[static_cast<std::size_t>(i)];
        for (int c = 1; c < C; ++c) {
            real x = v[static_cast<std::size_t>(std::int64_t(c) * hw + i)];
            if (x > best_v) {
                best_v = x;
                best = c;
            }
        }
        out.v[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic pair generation
// ---------------------------------------------------------------------------

// Smooth-intensity blobs with crisp per-blob class labels over a gentle
// background ramp. The fixed image is the base scene; the moving image is the
// base warped by a random smooth field (kept as ground truth). Independent
// Gaussian noise goes onto both images after warping, so the noise fields of
// the pair are uncorrelated.
inline RegistrationSample generate_synthetic_pair(const SyntheticConfig& cfg, Rng& rng) {
    cfg.validate();
    int H = cfg.height, W = cfg.width;
    std::int64_t hw = std::int64_t(H) * W;

    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double bg0 = 0.05 + 0.10 * uni(rng);
    double ramp_x = 0.10 * (2 * uni(rng) - 1);
    double ramp_y = 0.10 * (2 * uni(rng) - 1);

    struct Blob {
        double cx, cy, radius, peak;
        int cls;
    };
    std::uniform_int_distribution<int> count_dist(cfg.blobs_min, cfg.blobs_max);
    int blob_count = count_dist(rng);
    std::uniform_int_distribution<int> class_dist(1, cfg.classes - 1);
    std::vector<Blob> blobs;
    for (int b = 0; b < blob_count; ++b) {
        Blob bl;
        bl.radius = cfg.radius_lo + (cfg.radius_hi - cfg.radius_lo) * uni(rng);
        double margin = bl.radius * 0.6;
        bl.cx = margin + (W - 1 - 2 * margin) * uni(rng);
        bl.cy = margin + (H - 1 - 2 * margin) * uni(rng);
        bl.peak = 0.5 + 0.45 * uni(rng);
        bl.cls = class_dist(rng);
        blobs.push_back(bl);
    }

    std::vector<real> base(static_cast<std::size_t>(hw));
    LabelMap base_labels(H, W);
    const double label_claim = 0.3;  // claim threshold: label disc is ~0.84 * radius
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double v = bg0 + ramp_x * (static_cast<double>(x) / W) +
                       ramp_y * (static_cast<double>(y) / H);
            double best_claim = 0;
            int best_cls = 0;
            for (const auto& bl : blobs) {
                double dx = x - bl.cx, dy = y - bl.cy;
                double claim = 1.0 - (dx * dx + dy * dy) / (bl.radius * bl.radius);
                if (claim <= 0) continue;
                v += bl.peak * claim;
                if (claim > best_claim) {
                    best_claim = claim;
                    best_cls = bl.cls;
                }
            }
            base[static_cast<std::size_t>(std::int64_t(y) * W + x)] =
                static_cast<real>(std::min(1.0, std::max(0.0, v)));
            base_labels.at(y, x) = best_claim > label_claim ? best_cls : 0;
        }
    }

    Tensor fixed = Tensor::from_values({1, 1, H, W}, base);
    DisplacementField gt = random_smooth_field(rng, H, W, cfg.deform_amplitude, cfg.deform_sigma);

    RegistrationSample out;
    out.fixed = fixed;
    out.fixed_labels = base_labels;
    if (cfg.deform_amplitude == real(0)) {
        out.moving = Tensor::from_values({1, 1, H, W}, base);
        out.moving_labels = base_labels;
    } else {
        out.moving = warp_bilinear(fixed, gt);
        out.moving_labels = warp_labels_nn(base_labels, gt);
    }
    out.ground_truth_field = gt;

    if (cfg.noise_sigma > 0) {
        std::normal_distribution<double> noise(0.0, static_cast<double>(cfg.noise_sigma));
        for (Tensor* img : {&out.moving, &out.fixed}) {
            auto& v = img->mutable_values();
            for (auto& x : v) {
                double w = static_cast<double>(x) + noise(rng);
                x = static_cast<real>(std::min(1.0, std::max(0.0, w)));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// Deterministic shuffled partition; sizes are floor(n*f) with the remainder
// handed to the parts with the largest fractional parts.
inline DatasetSplit split_dataset(int n, const std::array<double, 3>& fractions,
                                  std::uint64_t seed) {
    double fsum = fractions[0] + fractions[1] + fractions[2];
    DEEPSIM_CHECK(std::abs(fsum - 1.0) <= 1e-9, "split fractions must sum to 1, got ", fsum);
    for (double f : fractions) DEEPSIM_CHECK(f >= 0, "split fractions must be >= 0");
    DEEPSIM_CHECK(n >= 3, "cannot split ", n, " samples into 3 parts");

    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);

    std::array<int, 3> sizes{};
    std::array<double, 3> frac_part{};
    int assigned = 0;
    for (int p = 0; p < 3; ++p) {
        double exact = fractions[static_cast<std::size_t>(p)] * n;
        sizes[static_cast<std::size_t>(p)] = static_cast<int>(std::floor(exact));
        frac_part[static_cast<std::size_t>(p)] = exact - sizes[static_cast<std::size_t>(p)];
        assigned += sizes[static_cast<std::size_t>(p)];
    }
    for (int r = 0; r < n - assigned; ++r) {
        int best = 0;
        for (int p = 1; p < 3; ++p)
            if (frac_part[static_cast<std::size_t>(p)] > frac_part[static_cast<std::size_t>(best)])
                best = p;
        sizes[static_cast<std::size_t>(best)] += 1;
        frac_part[static_cast<std::size_t>(best)] = -1;
    }

    DatasetSplit out;
    auto it = idx.begin();
    out.train.assign(it, it + sizes[0]);
    it += sizes[0];
    out.val.assign(it, it + sizes[1]);
    it += sizes[1];
    out.test.assign(it, it + sizes[2]);
    return out;
}

inline Dataset make_synthetic_dataset(const SyntheticConfig& cfg, int n_train, int n_val,
                                      int n_test) {
    Dataset ds;
    Rng rng(cfg.seed);
    int total = n_train + n_val + n_test;
    ds.samples.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) ds.samples.push_back(generate_synthetic_pair(cfg, rng));
    ds.split.train.resize(static_cast<std::size_t>(n_train));
    std::iota(ds.split.train.begin(), ds.split.train.end(), 0);
    ds.split.val.resize(static_cast<std::size_t>(n_val));
    std::iota(ds.split.val.begin(), ds.split.val.end(), n_train);
    ds.split.test.resize(static_cast<std::size_t>(n_test));
    std::iota(ds.split.test.begin(), ds.split.test.end(), n_train + n_val);
    return ds;
}

}  // namespace deepsim
