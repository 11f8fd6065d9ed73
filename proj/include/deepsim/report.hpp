#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepsim/eval.hpp"
#include "deepsim/sweep.hpp"
#include "deepsim/train.hpp"

namespace deepsim {

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }

    void require_columns(const std::vector<std::string>& names) const {
        for (const auto& n : names)
            DEEPSIM_CHECK(column(n) >= 0, "CSV is missing required column '", n, "'");
    }
};

namespace csv_detail {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace csv_detail

inline Csv read_csv(const std::string& path) {
    std::ifstream f(path);
    DEEPSIM_REQUIRE_IO(f.good(), "cannot open ", path);
    Csv out;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = csv_detail::split_line(line);
        if (first) {
            out.header = fields;
            first = false;
        } else {
            DEEPSIM_REQUIRE_IO(fields.size() == out.header.size(), path, ": row with ",
                               fields.size(), " fields, header has ", out.header.size());
            out.rows.push_back(fields);
        }
    }
    DEEPSIM_REQUIRE_IO(!out.header.empty(), path, ": empty CSV");
    return out;
}

inline void write_csv(const Csv& csv, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    DEEPSIM_REQUIRE_IO(f.good(), "cannot open ", path, " for writing");
    for (std::size_t i = 0; i < csv.header.size(); ++i)
        f << (i ? "," : "") << csv.header[i];
    f << "\n";
    for (const auto& row : csv.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
        f << "\n";
    }
    DEEPSIM_REQUIRE_IO(f.good(), "short write to ", path);
}

// train-log schema: (epoch, split, metric_name, value)
inline Csv train_log_csv(const TrainLog& log) {
    Csv csv;
    csv.header = {"epoch", "split", "metric_name", "value"};
    for (const auto& r : log.records) {
        std::string e = std::to_string(r.epoch);
        csv.rows.push_back({e, "train", "loss", csv_detail::fmt(r.train_loss)});
        csv.rows.push_back({e, "val", "loss", csv_detail::fmt(r.val_loss)});
        if (!std::isnan(r.val_dice))
            csv.rows.push_back({e, "val", "mean_dice", csv_detail::fmt(r.val_dice)});
        csv.rows.push_back({e, "run", "lr", csv_detail::fmt(r.lr)});
        csv.rows.push_back({e, "run", "seconds", csv_detail::fmt(r.seconds)});
    }
    return csv;
}

// evaluate schema: (sample_id, class_id, dice, sigma2_jac, fold_pct); one row
// per class plus a "mean" row per sample.
inline Csv evaluate_csv(const std::vector<SampleEvaluation>& evals) {
    Csv csv;
    csv.header = {"sample_id", "class_id", "dice", "sigma2_jac", "fold_pct"};
    for (const auto& e : evals) {
        std::string id = std::to_string(e.sample_index);
        std::string s2 = csv_detail::fmt(e.regularity.sigma2_jac);
        std::string fp = csv_detail::fmt(e.regularity.fold_pct);
        for (const auto& [cls, d] : e.per_class_dice)
            csv.rows.push_back({id, std::to_string(cls), csv_detail::fmt(d), s2, fp});
        csv.rows.push_back({id, "mean", csv_detail::fmt(e.mean_dice), s2, fp});
    }
    return csv;
}

// sweep schema: (lambda, val_mean_dice)
inline Csv sweep_csv(const std::vector<SweepEntry>& entries) {
    Csv csv;
    csv.header = {"lambda", "val_mean_dice"};
    for (const auto& e : entries)
        csv.rows.push_back({csv_detail::fmt(static_cast<double>(e.lambda)),
                            csv_detail::fmt(e.val_mean_dice)});
    return csv;
}

// compare schema: (report_a, report_b, p, d, threshold, significant)
struct CompareRow {
    std::string report_a, report_b;
    double p = 1, d = 0, threshold = 0.05;
    bool significant = false;
};

inline Csv compare_csv(const std::vector<CompareRow>& rows) {
    Csv csv;
    csv.header = {"report_a", "report_b", "p", "d", "threshold", "significant"};
    for (const auto& r : rows)
        csv.rows.push_back({r.report_a, r.report_b, csv_detail::fmt(r.p), csv_detail::fmt(r.d),
                            csv_detail::fmt(r.threshold), r.significant ? "1" : "0"});
    return csv;
}

// ---------------------------------------------------------------------------
// Box statistics (Fig.-4-style: median, quartiles, deciles, outliers)
// ---------------------------------------------------------------------------

struct BoxStats {
    double d1 = 0, q1 = 0, median = 0, q3 = 0, d9 = 0;
    std::vector<double> outliers;  // values beyond the deciles
};

// Linear interpolation between closest ranks (the common "type 7" rule).
inline double quantile(std::vector<double> values, double p) {
    DEEPSIM_CHECK(!values.empty(), "quantile of empty data");
    std::sort(values.begin(), values.end());
    double h = (static_cast<double>(values.size()) - 1) * p;
    std::size_t lo = static_cast<std::size_t>(std::floor(h));
    std::size_t hi = std::min(values.size() - 1, lo + 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline BoxStats box_stats(const std::vector<double>& values) {
    BoxStats b;
    b.d1 = quantile(values, 0.1);
    b.q1 = quantile(values, 0.25);
    b.median = quantile(values, 0.5);
    b.q3 = quantile(values, 0.75);
    b.d9 = quantile(values, 0.9);
    for (double v : values)
        if (v < b.d1 || v > b.d9) b.outliers.push_back(v);
    return b;
}

// ---------------------------------------------------------------------------
// SVG emission (self-contained, no external references)
// ---------------------------------------------------------------------------

namespace svg_detail {

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
    return colors[i % 8];
}

struct Canvas {
    std::ostringstream out;
    int width, height;

    Canvas(int w, int h) : width(w), height(h) {
        out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
            << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
            << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
            << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h
            << "\" fill=\"white\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const char* color = "#333333",
              double stroke = 1.0) {
        out << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
            << "\" stroke=\"" << color << "\" stroke-width=\"" << stroke << "\"/>\n";
    }

    void rect(double x, double y, double w, double h, const char* fill, const char* stroke) {
        out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
            << "\" fill=\"" << fill << "\" fill-opacity=\"0.35\" stroke=\"" << stroke
            << "\"/>\n";
    }

    void circle(double x, double y, double r, const char* color) {
        out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << color
            << "\"/>\n";
    }

    void text(double x, double y, const std::string& s, int size = 11,
              const char* anchor = "start", const char* color = "#222222") {
        out << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
            << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\" fill=\"" << color
            << "\">" << escape(s) << "</text>\n";
    }

    void polyline(const std::vector<std::pair<double, double>>& pts, const char* color) {
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : pts) out << x << "," << y << " ";
        out << "\"/>\n";
    }

    static std::string escape(const std::string& s) {
        std::string r;
        for (char c : s) {
            if (c == '<') r += "&lt;";
            else if (c == '>') r += "&gt;";
            else if (c == '&') r += "&amp;";
            else r.push_back(c);
        }
        return r;
    }

    void save(const std::string& path) {
        out << "</svg>\n";
        std::ofstream f(path, std::ios::trunc);
        DEEPSIM_REQUIRE_IO(f.good(), "cannot open ", path, " for writing");
        f << out.str();
        DEEPSIM_REQUIRE_IO(f.good(), "short write to ", path);
    }
};

struct LinScale {
    double lo = 0, hi = 1, a = 0, b = 1;  // maps [lo,hi] -> [a,b]
    double operator()(double v) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

inline LinScale fit(double lo, double hi, double a, double b) {
    if (hi <= lo) hi = lo + 1;
    return {lo, hi, a, b};
}

}  // namespace svg_detail

// Dice/loss-vs-epoch line chart: one polyline per (split, metric) label found
// in a train-log CSV.
inline void plot_convergence(const Csv& csv, const std::string& out_path) {
    csv.require_columns({"epoch", "split", "metric_name", "value"});
    DEEPSIM_CHECK(!csv.rows.empty(), "plot: no data rows");
    int ce = csv.column("epoch"), cs = csv.column("split"), cm = csv.column("metric_name"),
        cv = csv.column("value");

    std::map<std::string, std::vector<std::pair<double, double>>> series;
    for (const auto& row : csv.rows) {
        const std::string& metric = row[static_cast<std::size_t>(cm)];
        if (metric == "seconds" || metric == "lr") continue;
        std::string label = row[static_cast<std::size_t>(cs)] + "/" + metric;
        series[label].emplace_back(std::stod(row[static_cast<std::size_t>(ce)]),
                                   std::stod(row[static_cast<std::size_t>(cv)]));
    }
    DEEPSIM_CHECK(!series.empty(), "plot: no plottable metrics");

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (auto& [label, pts] : series) {
        std::sort(pts.begin(), pts.end());
        for (auto& [x, y] : pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }

    svg_detail::Canvas c(640, 420);
    auto sx = svg_detail::fit(xmin, xmax, 60, 620);
    auto sy = svg_detail::fit(ymin, ymax, 380, 30);
    c.line(60, 380, 620, 380);
    c.line(60, 380, 60, 30);
    for (int t = 0; t <= 4; ++t) {
        double fx = xmin + (xmax - xmin) * t / 4.0;
        double fy = ymin + (ymax - ymin) * t / 4.0;
        c.text(sx(fx), 396, csv_detail::fmt(std::round(fx)), 10, "middle");
        c.text(54, sy(fy) + 4, csv_detail::fmt(fy), 10, "end");
        c.line(sx(fx), 380, sx(fx), 383);
        c.line(57, sy(fy), 60, sy(fy));
    }
    c.text(340, 414, "epoch", 11, "middle");

    std::size_t i = 0;
    for (const auto& [label, pts] : series) {
        std::vector<std::pair<double, double>> px;
        for (const auto& [x, y] : pts) px.emplace_back(sx(x), sy(y));
        c.polyline(px, svg_detail::palette(i));
        c.text(66, 38 + 14 * static_cast<double>(i), label, 11, "start", svg_detail::palette(i));
        ++i;
    }
    c.save(out_path);
}

// Validation-Dice-vs-lambda chart on a log x-axis.
inline void plot_sweep(const Csv& csv, const std::string& out_path) {
    csv.require_columns({"lambda", "val_mean_dice"});
    DEEPSIM_CHECK(!csv.rows.empty(), "plot: no data rows");
    int cl = csv.column("lambda"), cd = csv.column("val_mean_dice");
    std::vector<std::pair<double, double>> pts;
    for (const auto& row : csv.rows) {
        double lambda = std::stod(row[static_cast<std::size_t>(cl)]);
        DEEPSIM_CHECK(lambda > 0, "plot: sweep lambda must be positive for the log axis");
        pts.emplace_back(std::log10(lambda), std::stod(row[static_cast<std::size_t>(cd)]));
    }
    std::sort(pts.begin(), pts.end());

    double xmin = pts.front().first, xmax = pts.back().first;
    double ymin = 1e300, ymax = -1e300;
    for (auto& [x, y] : pts) {
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
    }
    svg_detail::Canvas c(640, 420);
    auto sx = svg_detail::fit(xmin, xmax, 60, 620);
    auto sy = svg_detail::fit(ymin, ymax, 380, 30);
    c.line(60, 380, 620, 380);
    c.line(60, 380, 60, 30);
    for (int e = static_cast<int>(std::floor(xmin)); e <= static_cast<int>(std::ceil(xmax)); ++e) {
        if (e < xmin - 1e-9 || e > xmax + 1e-9) continue;
        c.line(sx(e), 380, sx(e), 383);
        c.text(sx(e), 396, "1e" + std::to_string(e), 10, "middle");
    }
    for (int t = 0; t <= 4; ++t) {
        double fy = ymin + (ymax - ymin) * t / 4.0;
        c.text(54, sy(fy) + 4, csv_detail::fmt(fy), 10, "end");
        c.line(57, sy(fy), 60, sy(fy));
    }
    c.text(340, 414, "lambda (log)", 11, "middle");
    c.text(20, 205, "val mean dice", 11, "middle");

    std::vector<std::pair<double, double>> px;
    for (const auto& [x, y] : pts) px.emplace_back(sx(x), sy(y));
    c.polyline(px, svg_detail::palette(1));
    for (const auto& [x, y] : px) c.circle(x, y, 3, svg_detail::palette(1));
    c.save(out_path);
}

// The per-report box statistics a boxplot draws; exposed so the geometry can
// be checked against independent order statistics.
inline std::vector<std::pair<std::string, BoxStats>> boxplot_stats(
    const std::vector<std::pair<std::string, std::vector<double>>>& data) {
    std::vector<std::pair<std::string, BoxStats>> out;
    for (const auto& [label, values] : data) {
        DEEPSIM_CHECK(!values.empty(), "plot: series '", label, "' has no data rows");
        out.emplace_back(label, box_stats(values));
    }
    return out;
}

// Box plot with median, quartile box, decile whiskers and outlier dots.
inline void plot_boxplot(const std::vector<std::pair<std::string, std::vector<double>>>& data,
                         const std::string& out_path) {
    DEEPSIM_CHECK(!data.empty(), "plot: no data series");
    auto stats = boxplot_stats(data);
    double ymin = 1e300, ymax = -1e300;
    for (const auto& [label, values] : data)
        for (double v : values) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    if (ymax <= ymin) ymax = ymin + 1;
    double pad = 0.05 * (ymax - ymin);

    svg_detail::Canvas c(640, 420);
    auto sy = svg_detail::fit(ymin - pad, ymax + pad, 380, 30);
    c.line(60, 380, 620, 380);
    c.line(60, 380, 60, 30);
    for (int t = 0; t <= 4; ++t) {
        double fy = (ymin - pad) + (ymax - ymin + 2 * pad) * t / 4.0;
        c.text(54, sy(fy) + 4, csv_detail::fmt(fy), 10, "end");
        c.line(57, sy(fy), 60, sy(fy));
    }

    double slot = 560.0 / static_cast<double>(stats.size());
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const auto& [label, b] = stats[i];
        double cx = 60 + slot * (static_cast<double>(i) + 0.5);
        double half = std::min(40.0, slot * 0.3);
        const char* color = svg_detail::palette(i);
        c.line(cx, sy(b.d1), cx, sy(b.q1), color);
        c.line(cx, sy(b.q3), cx, sy(b.d9), color);
        c.line(cx - half * 0.6, sy(b.d1), cx + half * 0.6, sy(b.d1), color);
        c.line(cx - half * 0.6, sy(b.d9), cx + half * 0.6, sy(b.d9), color);
        c.rect(cx - half, sy(b.q3), 2 * half, sy(b.q1) - sy(b.q3), color, color);
        c.line(cx - half, sy(b.median), cx + half, sy(b.median), color, 2.0);
        for (double v : b.outliers) c.circle(cx, sy(v), 2.5, color);
        c.text(cx, 398, label, 11, "middle");
    }
    c.save(out_path);
}

// ---------------------------------------------------------------------------
// Run manifests: enough context next to every artifact to reproduce the run.
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::uint64_t seed = 0;
    std::vector<std::string> artifacts;
    double wall_clock_seconds = 0;
};

inline void write_manifest(const RunManifest& m, const std::string& path) {
    nlohmann::json j{{"command", m.command},
                     {"config", m.config},
                     {"seed", m.seed},
                     {"artifacts", m.artifacts},
                     {"tool_version", kVersion},
                     {"wall_clock_seconds", m.wall_clock_seconds}};
    std::ofstream f(path, std::ios::trunc);
    DEEPSIM_REQUIRE_IO(f.good(), "cannot open ", path, " for writing");
    f << j.dump(2) << "\n";
    DEEPSIM_REQUIRE_IO(f.good(), "short write to ", path);
}

}  // namespace deepsim
