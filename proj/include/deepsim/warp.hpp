#pragma once

#include <cmath>
#include <vector>

#include "deepsim/label_map.hpp"
#include "deepsim/tensor.hpp"

namespace deepsim {

// Dense displacement field u with Phi(p) = p + u(p). Stored as [N,2,H,W];
// channel 0 holds x-displacements, channel 1 y-displacements, both in pixels.
struct DisplacementField {
    Tensor u;

    DisplacementField() = default;
    explicit DisplacementField(Tensor t) : u(std::move(t)) {
        const Shape& s = u.shape();
        DEEPSIM_CHECK(s.size() == 4 && s[1] == 2, "displacement field must be [N,2,H,W], got ",
                      shape_str(s));
    }

    int batch() const { return u.shape()[0]; }
    int height() const { return u.shape()[2]; }
    int width() const { return u.shape()[3]; }

    static DisplacementField zero(int h, int w, int n = 1) {
        return DisplacementField(Tensor::zeros({n, 2, h, w}));
    }

    bool is_finite() const {
        for (real v : u.values())
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

namespace detail {

inline real bilinear_sample(const real* img, int H, int W, real sx, real sy) {
    int x0 = static_cast<int>(std::floor(sx));
    int y0 = static_cast<int>(std::floor(sy));
    real fx = sx - static_cast<real>(x0);
    real fy = sy - static_cast<real>(y0);
    auto cx = [W](int x) { return x < 0 ? 0 : (x >= W ? W - 1 : x); };
    auto cy = [H](int y) { return y < 0 ? 0 : (y >= H ? H - 1 : y); };
    real c00 = img[std::int64_t(cy(y0)) * W + cx(x0)];
    real c10 = img[std::int64_t(cy(y0)) * W + cx(x0 + 1)];
    real c01 = img[std::int64_t(cy(y0 + 1)) * W + cx(x0)];
    real c11 = img[std::int64_t(cy(y0 + 1)) * W + cx(x0 + 1)];
    return (real(1) - fy) * ((real(1) - fx) * c00 + fx * c10) +
           fy * ((real(1) - fx) * c01 + fx * c11);
}

}  // namespace detail

// Samples `source` at p + u(p) with bilinear interpolation; out-of-bounds
// samples clamp to the border pixel. Differentiable with respect to both the
// source intensities and the displacement field.
inline Tensor warp_bilinear(const Tensor& source, const DisplacementField& field) {
    DEEPSIM_CHECK(source.shape().size() == 4, "warp_bilinear: source must be NCHW, got ",
                  shape_str(source.shape()));
    const Shape& ss = source.shape();
    const Shape& fs = field.u.shape();
    DEEPSIM_CHECK(ss[0] == fs[0] && ss[2] == fs[2] && ss[3] == fs[3],
                  "warp_bilinear: field ", shape_str(fs), " does not match source ", shape_str(ss));
    int N = ss[0], C = ss[1], H = ss[2], W = ss[3];
    std::int64_t hw = std::int64_t(H) * W;

    detail::NodePtr sn = source.node(), fn = field.u.node();
    std::vector<real> out(static_cast<std::size_t>(N) * C * hw);
    for (int n = 0; n < N; ++n) {
        const real* ux = fn->values.data() + (std::int64_t(n) * 2) * hw;
        const real* uy = ux + hw;
        for (int c = 0; c < C; ++c) {
            const real* img = sn->values.data() + (std::int64_t(n) * C + c) * hw;
            real* dst = out.data() + (std::int64_t(n) * C + c) * hw;
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    std::int64_t i = std::int64_t(y) * W + x;
                    dst[i] = detail::bilinear_sample(img, H, W, static_cast<real>(x) + ux[i],
                                                     static_cast<real>(y) + uy[i]);
                }
            }
        }
    }

    detail::Node* sp = sn.get();
    detail::Node* fp = fn.get();
    auto node = detail::make_result(
        ss, std::move(out), {sn, fn}, [sp, fp, N, C, H, W, hw](detail::Node& self) {
            const bool want_src = sp->requires_grad;
            const bool want_field = fp->requires_grad;
            if (want_src) sp->ensure_grad();
            if (want_field) fp->ensure_grad();
            auto cx = [W](int x) { return x < 0 ? 0 : (x >= W ? W - 1 : x); };
            auto cy = [H](int y) { return y < 0 ? 0 : (y >= H ? H - 1 : y); };
            for (int n = 0; n < N; ++n) {
                const real* ux = fp->values.data() + (std::int64_t(n) * 2) * hw;
                const real* uy = ux + hw;
                real* gux = want_field ? fp->grad.data() + (std::int64_t(n) * 2) * hw : nullptr;
                real* guy = want_field ? gux + hw : nullptr;
                for (int c = 0; c < C; ++c) {
                    const real* img = sp->values.data() + (std::int64_t(n) * C + c) * hw;
                    real* gimg = want_src ? sp->grad.data() + (std::int64_t(n) * C + c) * hw : nullptr;
                    const real* g = self.grad.data() + (std::int64_t(n) * C + c) * hw;
                    for (int y = 0; y < H; ++y) {
                        for (int x = 0; x < W; ++x) {
                            std::int64_t i = std::int64_t(y) * W + x;
                            real go = g[i];
                            if (go == real(0)) continue;
                            real sx = static_cast<real>(x) + ux[i];
                            real sy = static_cast<real>(y) + uy[i];
                            int x0 = static_cast<int>(std::floor(sx));
                            int y0 = static_cast<int>(std::floor(sy));
                            real fx = sx - static_cast<real>(x0);
                            real fy = sy - static_cast<real>(y0);
                            int xa = cx(x0), xb = cx(x0 + 1);
                            int ya = cy(y0), yb = cy(y0 + 1);
                            real c00 = img[std::int64_t(ya) * W + xa];
                            real c10 = img[std::int64_t(ya) * W + xb];
                            real c01 = img[std::int64_t(yb) * W + xa];
                            real c11 = img[std::int64_t(yb) * W + xb];
                            if (gimg) {
                                gimg[std::int64_t(ya) * W + xa] += go * (real(1) - fy) * (real(1) - fx);
                                gimg[std::int64_t(ya) * W + xb] += go * (real(1) - fy) * fx;
                                gimg[std::int64_t(yb) * W + xa] += go * fy * (real(1) - fx);
                                gimg[std::int64_t(yb) * W + xb] += go * fy * fx;
                            }
                            if (gux) {
                                // d(sample)/d(sx): clamped corners collapse to the
                                // same pixel outside the image, zeroing the slope.
                                gux[i] += go * ((real(1) - fy) * (c10 - c00) + fy * (c11 - c01));
                                guy[i] += go * ((real(1) - fx) * (c01 - c00) + fx * (c11 - c10));
                            }
                        }
                    }
                }
            }
        });
    return Tensor(node);
}

// Warps a discrete label map by nearest-neighbor lookup at p + u(p). Used for
// Dice evaluation; the differentiable path warps one-hot encodings instead.
inline LabelMap warp_labels_nn(const LabelMap& labels, const DisplacementField& field) {
    DEEPSIM_CHECK(field.batch() == 1, "warp_labels_nn expects a single-sample field");
    DEEPSIM_CHECK(labels.height == field.height() && labels.width == field.width(),
                  "warp_labels_nn: label extents do not match field");
    int H = labels.height, W = labels.width;
    std::int64_t hw = std::int64_t(H) * W;
    const real* ux = field.u.values().data();
    const real* uy = ux + hw;
    LabelMap out(H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            std::int64_t i = std::int64_t(y) * W + x;
            int sx = static_cast<int>(std::lround(static_cast<double>(x) + ux[i]));
            int sy = static_cast<int>(std::lround(static_cast<double>(y) + uy[i]));
            sx = sx < 0 ? 0 : (sx >= W ? W - 1 : sx);
            sy = sy < 0 ? 0 : (sy >= H ? H - 1 : sy);
            out.at(y, x) = labels.at(sy, sx);
        }
    }
    return out;
}

// Per-pixel det(I + grad u), forward differences in the interior and backward
// differences on the trailing border. Analysis only; not differentiated
// through.
inline Tensor jacobian_determinant(const DisplacementField& field) {
    int N = field.batch(), H = field.height(), W = field.width();
    DEEPSIM_CHECK(H >= 2 && W >= 2, "jacobian_determinant needs extents >= 2");
    std::int64_t hw = std::int64_t(H) * W;
    std::vector<real> out(static_cast<std::size_t>(N) * hw);
    const auto& u = field.u.values();
    for (int n = 0; n < N; ++n) {
        const real* ux = u.data() + (std::int64_t(n) * 2) * hw;
        const real* uy = ux + hw;
        real* dst = out.data() + std::int64_t(n) * hw;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                auto dx = [&](const real* ch) {
                    std::int64_t i = std::int64_t(y) * W + x;
                    return x + 1 < W ? ch[i + 1] - ch[i] : ch[i] - ch[i - 1];
                };
                auto dy = [&](const real* ch) {
                    std::int64_t i = std::int64_t(y) * W + x;
                    return y + 1 < H ? ch[i + W] - ch[i] : ch[i] - ch[i - W];
                };
                real a = real(1) + dx(ux);  // d(Phi_x)/dx
                real b = dy(ux);            // d(Phi_x)/dy
                real c = dx(uy);            // d(Phi_y)/dx
                real d = real(1) + dy(uy);  // d(Phi_y)/dy
                dst[std::int64_t(y) * W + x] = a * d - b * c;
            }
        }
    }
    return Tensor::from_values({N, 1, H, W}, std::move(out));
}

// ---------------------------------------------------------------------------
// Affine fields
// ---------------------------------------------------------------------------

struct AffineParams {
    real a11 = 1, a12 = 0, a21 = 0, a22 = 1;  // linear part, row-major
    real tx = 0, ty = 0;                      // translation in pixels

    real det() const { return a11 * a22 - a12 * a21; }
};

struct AffineRanges {
    real rotation_deg = 10;
    real scale_lo = real(0.9);
    real scale_hi = real(1.1);
    real shear = real(0.05);
    real translate_px = 3;
};

// Random orientation-preserving affine: rotation * anisotropic scale * shear.
inline AffineParams sample_affine(const AffineRanges& r, Rng& rng) {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    double theta = uni(rng) * static_cast<double>(r.rotation_deg) * 3.14159265358979323846 / 180.0;
    std::uniform_real_distribution<double> scale_dist(static_cast<double>(r.scale_lo),
                                                      static_cast<double>(r.scale_hi));
    double sx = scale_dist(rng), sy = scale_dist(rng);
    double hx = uni(rng) * static_cast<double>(r.shear);
    double ct = std::cos(theta), st = std::sin(theta);
    AffineParams p;
    // R(theta) * [[sx, hx*sx], [0, sy]]
    p.a11 = static_cast<real>(ct * sx);
    p.a12 = static_cast<real>(ct * hx * sx - st * sy);
    p.a21 = static_cast<real>(st * sx);
    p.a22 = static_cast<real>(st * hx * sx + ct * sy);
    p.tx = static_cast<real>(uni(rng) * static_cast<double>(r.translate_px));
    p.ty = static_cast<real>(uni(rng) * static_cast<double>(r.translate_px));
    DEEPSIM_CHECK(p.det() > 0, "sample_affine produced a non-orientation-preserving map");
    return p;
}

// u(p) = A(p - c) + c + t - p with c the image center, as a dense field.
inline DisplacementField affine_to_field(const AffineParams& p, int H, int W) {
    std::int64_t hw = std::int64_t(H) * W;
    std::vector<real> u(static_cast<std::size_t>(2) * hw);
    real cx = static_cast<real>(W - 1) / 2;
    real cy = static_cast<real>(H - 1) / 2;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            real dx = static_cast<real>(x) - cx;
            real dy = static_cast<real>(y) - cy;
            std::int64_t i = std::int64_t(y) * W + x;
            u[static_cast<std::size_t>(i)] = p.a11 * dx + p.a12 * dy + cx + p.tx - static_cast<real>(x);
            u[static_cast<std::size_t>(hw + i)] = p.a21 * dx + p.a22 * dy + cy + p.ty - static_cast<real>(y);
        }
    }
    return DisplacementField(Tensor::from_values({1, 2, H, W}, std::move(u)));
}

// ---------------------------------------------------------------------------
// Random smooth fields
// ---------------------------------------------------------------------------

namespace detail {

// Gaussian blur with a kernel truncated at 3*sigma. Border taps are clipped
// and the weight sum renormalized, so smoothing does not attenuate near edges.
inline void gaussian_blur_2d(std::vector<real>& img, int H, int W, real sigma) {
    int radius = static_cast<int>(std::ceil(3.0 * static_cast<double>(sigma)));
    if (radius < 1) return;
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i)
        kernel[static_cast<std::size_t>(i + radius)] =
            std::exp(-0.5 * (static_cast<double>(i) / sigma) * (static_cast<double>(i) / sigma));
    std::vector<real> tmp(img.size());
    // horizontal
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double acc = 0, wsum = 0;
            for (int k = -radius; k <= radius; ++k) {
                int xx = x + k;
                if (xx < 0 || xx >= W) continue;
                double w = kernel[static_cast<std::size_t>(k + radius)];
                acc += w * img[std::int64_t(y) * W + xx];
                wsum += w;
            }
            tmp[std::int64_t(y) * W + x] = static_cast<real>(acc / wsum);
        }
    }
    // vertical
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double acc = 0, wsum = 0;
            for (int k = -radius; k <= radius; ++k) {
                int yy = y + k;
                if (yy < 0 || yy >= H) continue;
                double w = kernel[static_cast<std::size_t>(k + radius)];
                acc += w * tmp[std::int64_t(yy) * W + x];
                wsum += w;
            }
            img[std::int64_t(y) * W + x] = static_cast<real>(acc / wsum);
        }
    }
}

}  // namespace detail

// White noise per channel smoothed by a Gaussian (truncated at 3*sigma) and
// rescaled so the largest displacement vector has norm `amplitude`.
inline DisplacementField random_smooth_field(Rng& rng, int H, int W, real amplitude, real sigma) {
    DEEPSIM_CHECK(amplitude >= 0, "random_smooth_field: amplitude must be >= 0");
    DEEPSIM_CHECK(sigma > 0, "random_smooth_field: sigma must be > 0");
    std::int64_t hw = std::int64_t(H) * W;
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<real> u(static_cast<std::size_t>(2) * hw);
    for (auto& v : u) v = static_cast<real>(dist(rng));
    if (amplitude == real(0)) {
        std::fill(u.begin(), u.end(), real(0));
        return DisplacementField(Tensor::from_values({1, 2, H, W}, std::move(u)));
    }
    std::vector<real> chan(static_cast<std::size_t>(hw));
    for (int c = 0; c < 2; ++c) {
        std::copy_n(u.data() + std::int64_t(c) * hw, hw, chan.data());
        detail::gaussian_blur_2d(chan, H, W, sigma);
        std::copy_n(chan.data(), hw, u.data() + std::int64_t(c) * hw);
    }
    double max_norm = 0;
    for (std::int64_t i = 0; i < hw; ++i) {
        double nx = u[static_cast<std::size_t>(i)];
        double ny = u[static_cast<std::size_t>(hw + i)];
        max_norm = std::max(max_norm, std::sqrt(nx * nx + ny * ny));
    }
    real scale = max_norm > 0 ? static_cast<real>(static_cast<double>(amplitude) / max_norm) : real(0);
    for (auto& v : u) v *= scale;
    return DisplacementField(Tensor::from_values({1, 2, H, W}, std::move(u)));
}

// Fixed-point approximation of the inverse field: v satisfying
// v(p) = -u(p + v(p)). Good enough for evaluating synthetic ground truth.
inline DisplacementField invert_field(const DisplacementField& field, int iterations = 20) {
    DEEPSIM_CHECK(field.batch() == 1, "invert_field expects a single-sample field");
    int H = field.height(), W = field.width();
    std::int64_t hw = std::int64_t(H) * W;
    const real* ux = field.u.values().data();
    const real* uy = ux + hw;
    std::vector<real> v(static_cast<std::size_t>(2) * hw, real(0));
    std::vector<real> next(v.size());
    for (int it = 0; it < iterations; ++it) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                std::int64_t i = std::int64_t(y) * W + x;
                real sx = static_cast<real>(x) + v[static_cast<std::size_t>(i)];
                real sy = static_cast<real>(y) + v[static_cast<std::size_t>(hw + i)];
                next[static_cast<std::size_t>(i)] = -detail::bilinear_sample(ux, H, W, sx, sy);
                next[static_cast<std::size_t>(hw + i)] = -detail::bilinear_sample(uy, H, W, sx, sy);
            }
        }
        v.swap(next);
    }
    return DisplacementField(Tensor::from_values({1, 2, H, W}, std::move(v)));
}

// Mean Euclidean norm of the displacement vectors, a convergence/λ diagnostic.
inline double mean_displacement(const DisplacementField& field) {
    int N = field.batch(), H = field.height(), W = field.width();
    std::int64_t hw = std::int64_t(H) * W;
    const auto& u = field.u.values();
    double acc = 0;
    for (int n = 0; n < N; ++n) {
        const real* ux = u.data() + (std::int64_t(n) * 2) * hw;
        const real* uy = ux + hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            double a = ux[i], b = uy[i];
            acc += std::sqrt(a * a + b * b);
        }
    }
    return acc / (static_cast<double>(N) * static_cast<double>(hw));
}

}  // namespace deepsim
