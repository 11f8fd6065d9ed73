#pragma once

#include <functional>
#include <vector>

#include "deepsim/tensor.hpp"
#include "deepsim/warp.hpp"

namespace deepsim {

// Multi-resolution activation maps taken from an encoder; level l has C_l
// channels at 1/2^l of the input resolution. This is the single definition of
// the feature stack both the similarity metric and inspection tooling use.
using FeaturePyramid = std::vector<Tensor>;

// A frozen feature extractor as a differentiable function of its input.
using FeatureFn = std::function<FeaturePyramid(const Tensor&)>;

enum class MetricKind { mse, ncc, ncc_sup, deepsim_ae, deepsim_seg };

inline bool metric_needs_extractor(MetricKind k) {
    return k == MetricKind::deepsim_ae || k == MetricKind::deepsim_seg;
}

inline bool metric_needs_labels(MetricKind k) { return k == MetricKind::ncc_sup; }

inline const char* metric_name(MetricKind k) {
    switch (k) {
        case MetricKind::mse: return "mse";
        case MetricKind::ncc: return "ncc";
        case MetricKind::ncc_sup: return "ncc_sup";
        case MetricKind::deepsim_ae: return "deepsim_ae";
        case MetricKind::deepsim_seg: return "deepsim_seg";
    }
    return "?";
}

struct MetricSpec {
    MetricKind kind = MetricKind::mse;
    int window = 9;          // NCC patch extent
    real gamma = real(1.0);  // weight of the supervised term (ncc_sup)
    real eps = real(1e-5);   // denominator floor for cosine/variance divisions
    FeatureFn extractor;     // required for deepsim kinds, forbidden otherwise

    void validate() const {
        DEEPSIM_CHECK(window >= 3 && window % 2 == 1, "metric: window must be odd and >= 3, got ",
                      window);
        if (metric_needs_extractor(kind)) {
            DEEPSIM_CHECK(static_cast<bool>(extractor), "metric ", metric_name(kind),
                          " requires a feature extractor");
        } else {
            DEEPSIM_CHECK(!extractor, "metric ", metric_name(kind),
                          " does not take a feature extractor");
        }
    }
};

// ---------------------------------------------------------------------------
// Intensity metrics
// ---------------------------------------------------------------------------

inline Tensor mse(const Tensor& morphed, const Tensor& fixed) {
    DEEPSIM_CHECK(morphed.shape() == fixed.shape(), "mse: shape mismatch ",
                  shape_str(morphed.shape()), " vs ", shape_str(fixed.shape()));
    return mean(square(sub(morphed, fixed)));
}

// Patch-wise normalized cross-correlation, expressed as the cosine similarity
// of mean-centered window vectors and averaged over every window position
// fully inside the image. The denominator is floored at eps*N (N = window
// element count), so constant-vs-anything windows contribute 0.
inline Tensor ncc(const Tensor& morphed, const Tensor& fixed, int window = 9,
                  real eps = real(1e-5)) {
    DEEPSIM_CHECK(morphed.shape() == fixed.shape(), "ncc: shape mismatch ",
                  shape_str(morphed.shape()), " vs ", shape_str(fixed.shape()));
    DEEPSIM_CHECK(morphed.shape().size() == 4 && morphed.shape()[1] == 1,
                  "ncc expects [N,1,H,W] images, got ", shape_str(morphed.shape()));
    int H = morphed.shape()[2], W = morphed.shape()[3];
    DEEPSIM_CHECK(window % 2 == 1 && window >= 3, "ncc: window must be odd and >= 3");
    DEEPSIM_CHECK(window <= H && window <= W, "ncc: window ", window,
                  " exceeds image extents ", H, "x", W);

    const real n_elems = static_cast<real>(window) * static_cast<real>(window);
    // Global pre-centering leaves the window-centered value unchanged but
    // avoids the catastrophic cancellation of sum(x^2) - sum(x)^2/N on flat
    // images, so constant-vs-anything windows come out exactly 0.
    Tensor a = sub(morphed, mean(morphed));
    Tensor b = sub(fixed, mean(fixed));
    Tensor ones = Tensor::full({1, 1, window, window}, real(1));
    Tensor sum_a = conv2d(a, ones, 0);
    Tensor sum_b = conv2d(b, ones, 0);
    Tensor sum_ab = conv2d(mul(a, b), ones, 0);
    Tensor sum_aa = conv2d(square(a), ones, 0);
    Tensor sum_bb = conv2d(square(b), ones, 0);

    Tensor num = sub(sum_ab, scalar_mul(mul(sum_a, sum_b), real(1) / n_elems));
    Tensor var_a = sub(sum_aa, scalar_mul(square(sum_a), real(1) / n_elems));
    Tensor var_b = sub(sum_bb, scalar_mul(square(sum_b), real(1) / n_elems));
    real floor = eps * n_elems;
    // max(den, eps*N) applied on the squared product keeps sqrt away from 0.
    Tensor den = sqrt(clamp_min(mul(var_a, var_b), floor * floor));
    return mean(div(num, den));
}

// Mean-over-classes soft Dice of two channel-normalized label tensors.
inline Tensor soft_dice(const Tensor& a, const Tensor& b, real eps = real(1e-5)) {
    DEEPSIM_CHECK(a.shape() == b.shape(), "soft_dice: shape mismatch ", shape_str(a.shape()),
                  " vs ", shape_str(b.shape()));
    DEEPSIM_CHECK(a.shape().size() == 4, "soft_dice expects NCHW label tensors");
    int C = a.shape()[1];
    Tensor total = Tensor::scalar(0);
    for (int c = 0; c < C; ++c) {
        Tensor ac = slice_channels(a, c, c + 1);
        Tensor bc = slice_channels(b, c, c + 1);
        Tensor num = scalar_mul(sum(mul(ac, bc)), real(2));
        Tensor den = scalar_add(add(sum(square(ac)), sum(square(bc))), eps);
        total = add(total, div(num, den));
    }
    return scalar_mul(total, real(1) / static_cast<real>(C));
}

namespace detail {

inline void check_channel_normalized(const Tensor& t, const char* what) {
    const Shape& s = t.shape();
    DEEPSIM_CHECK(s.size() == 4, what, " must be NCHW");
    int N = s[0], C = s[1];
    std::int64_t hw = std::int64_t(s[2]) * s[3];
    const auto& v = t.values();
    for (int n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < hw; ++i) {
            real acc = 0;
            for (int c = 0; c < C; ++c) acc += v[static_cast<std::size_t>((std::int64_t(n) * C + c) * hw + i)];
            DEEPSIM_CHECK(std::abs(acc - real(1)) <= real(1e-4), what,
                          " is not channel-normalized (pixel sum ", acc, ")");
        }
    }
}

}  // namespace detail

// NCC extended by a supervised label-overlap term: ncc + gamma * softdice.
inline Tensor ncc_supervised(const Tensor& morphed, const Tensor& fixed,
                             const Tensor& warped_labels_soft, const Tensor& fixed_labels_onehot,
                             real gamma, int window = 9, real eps = real(1e-5)) {
    DEEPSIM_CHECK(warped_labels_soft.shape() == fixed_labels_onehot.shape(),
                  "ncc_supervised: label shape mismatch ", shape_str(warped_labels_soft.shape()),
                  " vs ", shape_str(fixed_labels_onehot.shape()));
    detail::check_channel_normalized(warped_labels_soft, "warped labels");
    detail::check_channel_normalized(fixed_labels_onehot, "fixed labels");
    Tensor base = ncc(morphed, fixed, window, eps);
    Tensor dice_term = soft_dice(warped_labels_soft, fixed_labels_onehot, eps);
    return add(base, scalar_mul(dice_term, gamma));
}

// Mean per-pixel cosine similarity of encoder feature maps, averaged over
// pyramid levels. Gradients flow into the inputs (and through a warp into the
// displacement field) but not into the extractor, whose parameters are frozen.
inline Tensor deepsim(const Tensor& morphed, const Tensor& fixed, const FeatureFn& extractor,
                      real eps = real(1e-5)) {
    DEEPSIM_CHECK(static_cast<bool>(extractor), "deepsim requires a feature extractor");
    DEEPSIM_CHECK(morphed.shape() == fixed.shape(), "deepsim: shape mismatch ",
                  shape_str(morphed.shape()), " vs ", shape_str(fixed.shape()));
    FeaturePyramid fa = extractor(morphed);
    FeaturePyramid fb = extractor(fixed);
    DEEPSIM_CHECK(fa.size() == fb.size() && !fa.empty(), "deepsim: extractor returned ",
                  fa.size(), " and ", fb.size(), " levels");
    Tensor total = Tensor::scalar(0);
    for (std::size_t l = 0; l < fa.size(); ++l) {
        DEEPSIM_CHECK(fa[l].shape() == fb[l].shape(), "deepsim: level ", l, " shape mismatch");
        Tensor num = sum_channels(mul(fa[l], fb[l]));
        Tensor na = sum_channels(square(fa[l]));
        Tensor nb = sum_channels(square(fb[l]));
        Tensor den = sqrt(clamp_min(mul(na, nb), eps * eps));
        total = add(total, mean(div(num, den)));
    }
    return scalar_mul(total, real(1) / static_cast<real>(fa.size()));
}

// ---------------------------------------------------------------------------
// Regularizer and combined loss
// ---------------------------------------------------------------------------

// Mean squared forward-difference gradient of the displacement field over the
// interior (positions where both forward differences exist). Constant fields
// cost nothing; u = (x, 0) costs exactly 1.
inline Tensor diffusion_regularizer(const DisplacementField& field) {
    const Tensor& u = field.u;
    int N = field.batch(), H = field.height(), W = field.width();
    DEEPSIM_CHECK(H >= 2 && W >= 2, "diffusion_regularizer needs extents >= 2");
    std::int64_t hw = std::int64_t(H) * W;
    detail::NodePtr un = u.node();
    const real* v = un->values.data();
    double acc = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < 2; ++c) {
            const real* ch = v + (std::int64_t(n) * 2 + c) * hw;
            for (int y = 0; y + 1 < H; ++y) {
                for (int x = 0; x + 1 < W; ++x) {
                    std::int64_t i = std::int64_t(y) * W + x;
                    double dx = ch[i + 1] - ch[i];
                    double dy = ch[i + W] - ch[i];
                    acc += dx * dx + dy * dy;
                }
            }
        }
    }
    real count = static_cast<real>(N) * static_cast<real>(H - 1) * static_cast<real>(W - 1);
    detail::Node* up = un.get();
    auto node = detail::make_result(
        {1}, {static_cast<real>(acc / static_cast<double>(count))}, {un},
        [up, N, H, W, hw, count](detail::Node& self) {
            if (!up->requires_grad) return;
            up->ensure_grad();
            real g = self.grad[0] / count;
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < 2; ++c) {
                    const real* ch = up->values.data() + (std::int64_t(n) * 2 + c) * hw;
                    real* gd = up->grad.data() + (std::int64_t(n) * 2 + c) * hw;
                    for (int y = 0; y + 1 < H; ++y) {
                        for (int x = 0; x + 1 < W; ++x) {
                            std::int64_t i = std::int64_t(y) * W + x;
                            real dx = ch[i + 1] - ch[i];
                            real dy = ch[i + W] - ch[i];
                            gd[i] -= real(2) * g * (dx + dy);
                            gd[i + 1] += real(2) * g * dx;
                            gd[i + W] += real(2) * g * dy;
                        }
                    }
                }
            }
        });
    return Tensor(node);
}

// Eq.-style combined objective: D(moving ∘ Phi, fixed) + lambda * R(Phi).
// Similarity-valued metrics enter negated so lower is always better. The
// ncc_sup kind additionally needs one-hot label tensors for both images.
inline Tensor registration_loss(const Tensor& moving, const Tensor& fixed,
                                const DisplacementField& field, const MetricSpec& spec,
                                real lambda, const Tensor* moving_labels_onehot = nullptr,
                                const Tensor* fixed_labels_onehot = nullptr) {
    spec.validate();
    DEEPSIM_CHECK(lambda >= 0, "registration_loss: lambda must be >= 0, got ", lambda);
    Tensor morphed = warp_bilinear(moving, field);
    Tensor dissimilarity;
    switch (spec.kind) {
        case MetricKind::mse:
            dissimilarity = mse(morphed, fixed);
            break;
        case MetricKind::ncc:
            dissimilarity = scalar_mul(ncc(morphed, fixed, spec.window, spec.eps), real(-1));
            break;
        case MetricKind::ncc_sup: {
            DEEPSIM_CHECK(moving_labels_onehot && fixed_labels_onehot,
                          "ncc_sup requires one-hot label tensors for both images");
            Tensor warped_soft = warp_bilinear(*moving_labels_onehot, field);
            dissimilarity = scalar_mul(ncc_supervised(morphed, fixed, warped_soft,
                                                      *fixed_labels_onehot, spec.gamma,
                                                      spec.window, spec.eps),
                                       real(-1));
            break;
        }
        case MetricKind::deepsim_ae:
        case MetricKind::deepsim_seg:
            dissimilarity = scalar_mul(deepsim(morphed, fixed, spec.extractor, spec.eps), real(-1));
            break;
    }
    if (lambda == real(0)) return dissimilarity;
    return add(dissimilarity, scalar_mul(diffusion_regularizer(field), lambda));
}

}  // namespace deepsim
