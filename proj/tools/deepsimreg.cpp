// deepsimreg: deformable 2D image registration with learned semantic
// similarity metrics. Subcommands cover the whole workflow: synthetic data
// generation, two-stage training (feature extractor, then registration
// network), lambda sweeps, evaluation, paired statistics, and SVG reports.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepsim/deepsim.hpp"

namespace ds = deepsim;

namespace {

std::uint64_t default_seed() {
    const char* env = std::getenv("DEEPSIMREG_SEED");
    if (!env) return 0;
    try {
        return std::stoull(env);
    } catch (const std::exception&) {
        throw std::invalid_argument(std::string("DEEPSIMREG_SEED is not an integer: ") + env);
    }
}

std::vector<int> parse_channels(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    if (out.empty()) throw std::invalid_argument("empty channel list");
    return out;
}

std::vector<ds::real> parse_grid(const std::string& s) {
    std::vector<ds::real> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(static_cast<ds::real>(std::stod(tok)));
    if (out.empty()) throw std::invalid_argument("empty lambda grid");
    return out;
}

std::string file_stem(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

struct TrainOpts {
    int epochs = 50;
    int micro_batch = 1;
    int accumulation = 4;
    double lr = 1e-4;
    int patience = 5;
    double lr_decay = 10;
    double min_lr = 1e-7;
    double dropout = 0.1;
    std::string channels = "16,32,64";
    std::uint64_t seed = default_seed();
    bool no_augment = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "Epoch budget");
        cmd->add_option("--micro-batch", micro_batch, "Samples per forward pass");
        cmd->add_option("--accumulation", accumulation,
                        "Micro-batches summed per optimizer step");
        cmd->add_option("--lr", lr, "Initial learning rate");
        cmd->add_option("--patience", patience, "Plateau patience in epochs");
        cmd->add_option("--lr-decay", lr_decay, "Plateau decay factor");
        cmd->add_option("--min-lr", min_lr, "Stop when the learning rate falls below this");
        cmd->add_option("--dropout", dropout, "Dropout probability");
        cmd->add_option("--channels", channels, "Per-stage channel counts, comma separated");
        cmd->add_option("--seed", seed, "RNG seed (default: $DEEPSIMREG_SEED or 0)");
        cmd->add_flag("--no-augment", no_augment, "Disable affine augmentation");
    }

    ds::TrainConfig to_config() const {
        ds::TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.micro_batch = micro_batch;
        cfg.accumulation = accumulation;
        cfg.lr = static_cast<ds::real>(lr);
        cfg.plateau_patience = patience;
        cfg.lr_decay = static_cast<ds::real>(lr_decay);
        cfg.min_lr = static_cast<ds::real>(min_lr);
        cfg.dropout_p = static_cast<ds::real>(dropout);
        cfg.channels = parse_channels(channels);
        cfg.seed = seed;
        cfg.augment_enabled = !no_augment;
        return cfg;
    }

    void describe(std::map<std::string, std::string>& m) const {
        m["epochs"] = std::to_string(epochs);
        m["micro_batch"] = std::to_string(micro_batch);
        m["accumulation"] = std::to_string(accumulation);
        m["lr"] = std::to_string(lr);
        m["patience"] = std::to_string(patience);
        m["lr_decay"] = std::to_string(lr_decay);
        m["min_lr"] = std::to_string(min_lr);
        m["dropout"] = std::to_string(dropout);
        m["channels"] = channels;
        m["seed"] = std::to_string(seed);
        m["augment"] = no_augment ? "off" : "on";
    }
};

ds::MetricKind metric_from_string(const std::string& s) {
    if (s == "mse") return ds::MetricKind::mse;
    if (s == "ncc") return ds::MetricKind::ncc;
    if (s == "ncc_sup") return ds::MetricKind::ncc_sup;
    if (s == "deepsim_ae") return ds::MetricKind::deepsim_ae;
    if (s == "deepsim_seg") return ds::MetricKind::deepsim_seg;
    throw std::invalid_argument("unknown metric '" + s + "'");
}

void validate_extractor_role(const ds::Network& net, ds::MetricKind kind) {
    if (kind == ds::MetricKind::deepsim_ae && net.config().shortcuts)
        throw std::invalid_argument(
            "deepsim_ae expects an autoencoder checkpoint (built without shortcuts)");
    if (kind == ds::MetricKind::deepsim_seg &&
        net.config().final_activation != ds::Activation::softmax_channels)
        throw std::invalid_argument(
            "deepsim_seg expects a segmentation checkpoint (softmax output)");
}

ds::ProgressFn stderr_progress(const std::string& tag) {
    return [tag](const ds::EpochRecord& r) {
        std::cerr << tag << " epoch " << r.epoch << ": train_loss=" << r.train_loss
                  << " val_loss=" << r.val_loss;
        if (!std::isnan(r.val_dice)) std::cerr << " val_dice=" << r.val_dice;
        std::cerr << " lr=" << r.lr << " (" << r.seconds << "s)\n";
    };
}

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += " ";
        s += argv[i];
    }
    return s;
}

// Mean-dice rows of an evaluate CSV keyed by sample id.
std::map<std::string, double> mean_dice_by_sample(const ds::Csv& csv, const std::string& path) {
    csv.require_columns({"sample_id", "class_id", "dice"});
    int cid = csv.column("sample_id"), ccl = csv.column("class_id"), cd = csv.column("dice");
    std::map<std::string, double> out;
    for (const auto& row : csv.rows)
        if (row[static_cast<std::size_t>(ccl)] == "mean")
            out[row[static_cast<std::size_t>(cid)]] =
                std::stod(row[static_cast<std::size_t>(cd)]);
    if (out.empty()) throw std::invalid_argument(path + ": no mean-dice rows");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deepsimreg: deformable image registration with learned similarity metrics"};
    app.set_version_flag("--version", ds::kVersion);
    app.set_config("--config", "", "Key-value config file; command-line flags take precedence");
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker threads for the conv kernels (0 = auto)");

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic registration dataset");
    struct {
        std::string out;
        int pairs = 250;
        double train_frac = 0.8, val_frac = 0.1, test_frac = 0.1;
        int height = 64, width = 64, classes = 3;
        double noise_sigma = 0.05, amplitude = 6, smoothness = 8;
        std::uint64_t seed = default_seed();
    } g;
    gen->add_option("--out", g.out, "Output dataset directory")->required();
    gen->add_option("--pairs", g.pairs, "Number of image pairs");
    gen->add_option("--train-frac", g.train_frac, "Training fraction");
    gen->add_option("--val-frac", g.val_frac, "Validation fraction");
    gen->add_option("--test-frac", g.test_frac, "Test fraction");
    gen->add_option("--height", g.height, "Image height");
    gen->add_option("--width", g.width, "Image width");
    gen->add_option("--classes", g.classes, "Label classes including background");
    gen->add_option("--noise-sigma", g.noise_sigma, "Additive Gaussian noise sigma");
    gen->add_option("--amplitude", g.amplitude, "Max deformation magnitude in pixels");
    gen->add_option("--smoothness", g.smoothness, "Deformation smoothness sigma in pixels");
    gen->add_option("--seed", g.seed, "RNG seed (default: $DEEPSIMREG_SEED or 0)");

    // ---- train-extractor ----
    auto* tex = app.add_subcommand("train-extractor",
                                   "Train a feature extractor on a surrogate task");
    struct {
        std::string task = "ae";
        std::string data, out, log;
        TrainOpts opts;
    } x;
    tex->add_option("--task", x.task, "Surrogate task: ae or seg")
        ->check(CLI::IsMember({"ae", "seg"}));
    tex->add_option("--data", x.data, "Dataset directory")->required();
    tex->add_option("--out", x.out, "Checkpoint output path")->required();
    tex->add_option("--log", x.log, "Training-log CSV path (default: <out>.trainlog.csv)");
    x.opts.add_to(tex);

    // ---- train-reg ----
    auto* treg = app.add_subcommand("train-reg", "Train a registration network");
    struct {
        std::string metric = "mse";
        std::string extractor, data, out, log;
        double lambda = 0.1;
        int window = 9;
        double gamma = 1.0;
        TrainOpts opts;
    } r;
    treg->add_option("--metric", r.metric, "mse | ncc | ncc_sup | deepsim_ae | deepsim_seg");
    treg->add_option("--extractor", r.extractor, "Extractor checkpoint (deepsim metrics)");
    treg->add_option("--lambda", r.lambda, "Diffusion-regularizer weight");
    treg->add_option("--window", r.window, "NCC window extent");
    treg->add_option("--gamma", r.gamma, "Supervised-term weight (ncc_sup)");
    treg->add_option("--data", r.data, "Dataset directory")->required();
    treg->add_option("--out", r.out, "Checkpoint output path")->required();
    treg->add_option("--log", r.log, "Training-log CSV path (default: <out>.trainlog.csv)");
    r.opts.add_to(treg);

    // ---- sweep ----
    auto* swp = app.add_subcommand("sweep", "Select lambda by validation mean Dice");
    struct {
        std::string metric = "mse";
        std::string extractor, data, out, best_model, log;
        std::string grid = "0.01,0.03,0.1,0.3,1,3";
        int window = 9;
        double gamma = 1.0;
        int jobs = 1;
        TrainOpts opts;
    } s;
    swp->add_option("--metric", s.metric, "mse | ncc | ncc_sup | deepsim_ae | deepsim_seg");
    swp->add_option("--extractor", s.extractor, "Extractor checkpoint (deepsim metrics)");
    swp->add_option("--grid", s.grid, "Comma-separated lambda grid");
    swp->add_option("--window", s.window, "NCC window extent");
    swp->add_option("--gamma", s.gamma, "Supervised-term weight (ncc_sup)");
    swp->add_option("--jobs", s.jobs, "Concurrent sweep runs");
    swp->add_option("--data", s.data, "Dataset directory")->required();
    swp->add_option("--out", s.out, "Sweep CSV output path")->required();
    swp->add_option("--best-model", s.best_model, "Save the best run's checkpoint here");
    swp->add_option("--log", s.log, "Save the best run's training log here");
    s.opts.add_to(swp);

    // ---- evaluate ----
    auto* ev = app.add_subcommand("evaluate", "Evaluate a registration checkpoint");
    struct {
        std::string model, data, report;
        std::string split = "test";
    } e;
    ev->add_option("--model", e.model, "Registration checkpoint")->required();
    ev->add_option("--data", e.data, "Dataset directory")->required();
    ev->add_option("--report", e.report, "Evaluation CSV output path")->required();
    ev->add_option("--split", e.split, "Dataset split to evaluate")
        ->check(CLI::IsMember({"train", "val", "test"}));

    // ---- compare ----
    auto* cmp = app.add_subcommand("compare", "Paired statistics across evaluation reports");
    struct {
        std::vector<std::string> reports;
        double alpha = 0.05;
        std::string correction = "bonferroni";
        std::string out;
    } c;
    cmp->add_option("--reports", c.reports, "Two or more evaluate CSVs (paired by sample id)")
        ->required()
        ->expected(2, -1);
    cmp->add_option("--alpha", c.alpha, "Significance level before correction");
    cmp->add_option("--correction", c.correction, "bonferroni | none")
        ->check(CLI::IsMember({"bonferroni", "none"}));
    cmp->add_option("--out", c.out, "Stats CSV output path")->required();

    // ---- plot ----
    auto* plt = app.add_subcommand("plot", "Render a report CSV as a self-contained SVG");
    struct {
        std::string kind;
        std::vector<std::string> inputs;
        std::string out;
    } p;
    plt->add_option("--kind", p.kind, "convergence | sweep | boxplot")
        ->required()
        ->check(CLI::IsMember({"convergence", "sweep", "boxplot"}));
    plt->add_option("--in", p.inputs, "Input CSV file(s)")->required();
    plt->add_option("--out", p.out, "SVG output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& h) {
        std::cerr << app.help() << std::flush;
        return 0;
    } catch (const CLI::CallForVersion&) {
        std::cerr << ds::kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& err) {
        std::cerr << "error: " << err.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }

    auto t_start = std::chrono::steady_clock::now();
    auto wall = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };
    ds::RunManifest manifest;
    manifest.command = join_args(argc, argv);

    try {
        ds::set_num_threads(threads);

        if (gen->parsed()) {
            ds::SyntheticConfig cfg;
            cfg.height = g.height;
            cfg.width = g.width;
            cfg.classes = g.classes;
            cfg.noise_sigma = static_cast<ds::real>(g.noise_sigma);
            cfg.deform_amplitude = static_cast<ds::real>(g.amplitude);
            cfg.deform_sigma = static_cast<ds::real>(g.smoothness);
            cfg.seed = g.seed;
            cfg.validate();
            DEEPSIM_CHECK(g.pairs >= 3, "gen-data: need at least 3 pairs");

            ds::Dataset dataset;
            ds::Rng rng(cfg.seed);
            for (int i = 0; i < g.pairs; ++i)
                dataset.samples.push_back(ds::generate_synthetic_pair(cfg, rng));
            dataset.split = ds::split_dataset(g.pairs, {g.train_frac, g.val_frac, g.test_frac},
                                              cfg.seed);
            ds::save_dataset(dataset, g.out);
            std::cerr << "gen-data: wrote " << g.pairs << " pairs to " << g.out << " ("
                      << dataset.split.train.size() << "/" << dataset.split.val.size() << "/"
                      << dataset.split.test.size() << " train/val/test)\n";

            manifest.seed = g.seed;
            manifest.config = {{"pairs", std::to_string(g.pairs)},
                               {"height", std::to_string(g.height)},
                               {"width", std::to_string(g.width)},
                               {"classes", std::to_string(g.classes)},
                               {"noise_sigma", std::to_string(g.noise_sigma)},
                               {"amplitude", std::to_string(g.amplitude)},
                               {"smoothness", std::to_string(g.smoothness)},
                               {"train_frac", std::to_string(g.train_frac)},
                               {"val_frac", std::to_string(g.val_frac)},
                               {"test_frac", std::to_string(g.test_frac)}};
            manifest.artifacts = {g.out};
            manifest.wall_clock_seconds = wall();
            ds::write_manifest(manifest, g.out + "/manifest.json");
        } else if (tex->parsed()) {
            ds::Dataset dataset = ds::load_dataset(x.data);
            ds::TrainConfig cfg = x.opts.to_config();
            ds::TrainResult result =
                x.task == "ae" ? ds::train_autoencoder(dataset, cfg, stderr_progress("ae"))
                               : ds::train_segmentation(dataset, cfg, stderr_progress("seg"));
            ds::save_checkpoint(result.net, x.out);
            std::string log_path = x.log.empty() ? x.out + ".trainlog.csv" : x.log;
            ds::write_csv(ds::train_log_csv(result.log), log_path);
            std::cerr << "train-extractor: saved " << x.out << " after "
                      << result.log.records.size() << " epochs\n";

            manifest.seed = x.opts.seed;
            x.opts.describe(manifest.config);
            manifest.config["task"] = x.task;
            manifest.config["data"] = x.data;
            manifest.artifacts = {x.out, log_path};
            manifest.wall_clock_seconds = wall();
            ds::write_manifest(manifest, x.out + ".manifest.json");
        } else if (treg->parsed()) {
            ds::Dataset dataset = ds::load_dataset(r.data);
            ds::TrainConfig cfg = r.opts.to_config();
            cfg.lambda = static_cast<ds::real>(r.lambda);
            cfg.metric.kind = metric_from_string(r.metric);
            cfg.metric.window = r.window;
            cfg.metric.gamma = static_cast<ds::real>(r.gamma);

            std::optional<ds::Network> extractor;
            if (ds::metric_needs_extractor(cfg.metric.kind)) {
                DEEPSIM_CHECK(!r.extractor.empty(), "metric ", r.metric,
                              " requires --extractor");
                extractor = ds::load_checkpoint(r.extractor);
                validate_extractor_role(*extractor, cfg.metric.kind);
            }
            ds::TrainResult result = ds::train_registration(
                dataset, extractor ? &*extractor : nullptr, cfg, stderr_progress(r.metric));
            ds::save_checkpoint(result.net, r.out);
            std::string log_path = r.log.empty() ? r.out + ".trainlog.csv" : r.log;
            ds::write_csv(ds::train_log_csv(result.log), log_path);
            std::cerr << "train-reg: saved " << r.out << " after " << result.log.records.size()
                      << " epochs\n";

            manifest.seed = r.opts.seed;
            r.opts.describe(manifest.config);
            manifest.config["metric"] = r.metric;
            manifest.config["lambda"] = std::to_string(r.lambda);
            manifest.config["window"] = std::to_string(r.window);
            manifest.config["gamma"] = std::to_string(r.gamma);
            manifest.config["extractor"] = r.extractor;
            manifest.config["data"] = r.data;
            manifest.artifacts = {r.out, log_path};
            manifest.wall_clock_seconds = wall();
            ds::write_manifest(manifest, r.out + ".manifest.json");
        } else if (swp->parsed()) {
            ds::Dataset dataset = ds::load_dataset(s.data);
            ds::TrainConfig cfg = s.opts.to_config();
            cfg.metric.kind = metric_from_string(s.metric);
            cfg.metric.window = s.window;
            cfg.metric.gamma = static_cast<ds::real>(s.gamma);
            std::vector<ds::real> grid = parse_grid(s.grid);

            std::optional<ds::Network> extractor;
            if (ds::metric_needs_extractor(cfg.metric.kind)) {
                DEEPSIM_CHECK(!s.extractor.empty(), "metric ", s.metric,
                              " requires --extractor");
                extractor = ds::load_checkpoint(s.extractor);
                validate_extractor_role(*extractor, cfg.metric.kind);
            }
            ds::SweepResult result = ds::lambda_sweep(
                dataset, extractor ? &*extractor : nullptr, cfg, grid, s.jobs,
                [](ds::real lambda, double dice) {
                    std::cerr << "sweep: lambda=" << lambda << " val_mean_dice=" << dice << "\n";
                });
            ds::write_csv(ds::sweep_csv(result.entries), s.out);
            std::cerr << "sweep: best lambda=" << result.best_lambda << "\n";
            manifest.artifacts = {s.out};
            if (!s.best_model.empty()) {
                ds::save_checkpoint(result.best_net, s.best_model);
                manifest.artifacts.push_back(s.best_model);
            }
            if (!s.log.empty()) {
                ds::write_csv(ds::train_log_csv(result.best_log), s.log);
                manifest.artifacts.push_back(s.log);
            }

            manifest.seed = s.opts.seed;
            s.opts.describe(manifest.config);
            manifest.config["metric"] = s.metric;
            manifest.config["grid"] = s.grid;
            manifest.config["jobs"] = std::to_string(s.jobs);
            manifest.config["extractor"] = s.extractor;
            manifest.config["data"] = s.data;
            manifest.config["best_lambda"] = std::to_string(result.best_lambda);
            manifest.wall_clock_seconds = wall();
            ds::write_manifest(manifest, s.out + ".manifest.json");
        } else if (ev->parsed()) {
            ds::Dataset dataset = ds::load_dataset(e.data);
            ds::Network net = ds::load_checkpoint(e.model);
            const std::vector<int>& indices = e.split == "train" ? dataset.split.train
                                              : e.split == "val" ? dataset.split.val
                                                                 : dataset.split.test;
            DEEPSIM_CHECK(!indices.empty(), "evaluate: split '", e.split, "' is empty");
            auto evals = ds::evaluate_registration(net, dataset, indices);
            ds::write_csv(ds::evaluate_csv(evals), e.report);
            double acc = 0;
            for (const auto& se : evals) acc += se.mean_dice;
            std::cerr << "evaluate: " << evals.size() << " samples, mean dice "
                      << acc / static_cast<double>(evals.size()) << "\n";

            manifest.config = {{"model", e.model}, {"data", e.data}, {"split", e.split}};
            manifest.artifacts = {e.report};
            manifest.wall_clock_seconds = wall();
            ds::write_manifest(manifest, e.report + ".manifest.json");
        } else if (cmp->parsed()) {
            std::vector<std::map<std::string, double>> tables;
            for (const auto& path : c.reports)
                tables.push_back(mean_dice_by_sample(ds::read_csv(path), path));
            for (std::size_t i = 1; i < tables.size(); ++i) {
                if (tables[i].size() != tables[0].size())
                    throw std::invalid_argument("compare: reports have unpaired sample ids");
                for (const auto& [id, dice] : tables[0])
                    if (!tables[i].count(id))
                        throw std::invalid_argument("compare: sample id " + id +
                                                    " missing from " + c.reports[i]);
            }
            int m = static_cast<int>(tables.size() * (tables.size() - 1) / 2);
            double threshold = c.correction == "bonferroni" ? ds::bonferroni(c.alpha, m) : c.alpha;
            std::vector<ds::CompareRow> rows;
            for (std::size_t i = 0; i < tables.size(); ++i) {
                for (std::size_t j = i + 1; j < tables.size(); ++j) {
                    std::vector<double> a, b;
                    for (const auto& [id, dice] : tables[i]) {
                        a.push_back(dice);
                        b.push_back(tables[j].at(id));
                    }
                    ds::CompareRow row;
                    row.report_a = file_stem(c.reports[i]);
                    row.report_b = file_stem(c.reports[j]);
                    row.p = ds::wilcoxon_signed_rank(a, b);
                    row.d = ds::cohens_d(a, b);
                    row.threshold = threshold;
                    row.significant = row.p < threshold;
                    rows.push_back(row);
                }
            }
            ds::write_csv(ds::compare_csv(rows), c.out);
            std::cerr << "compare: wrote " << rows.size() << " pairwise tests to " << c.out
                      << "\n";

            manifest.config = {{"alpha", std::to_string(c.alpha)},
                               {"correction", c.correction},
                               {"comparisons", std::to_string(m)}};
            manifest.artifacts = {c.out};
            manifest.wall_clock_seconds = wall();
            ds::write_manifest(manifest, c.out + ".manifest.json");
        } else if (plt->parsed()) {
            if (p.kind == "convergence") {
                // Multiple logs merge with the file stem prefixed to the label.
                ds::Csv merged;
                merged.header = {"epoch", "split", "metric_name", "value"};
                for (const auto& path : p.inputs) {
                    ds::Csv csv = ds::read_csv(path);
                    csv.require_columns({"epoch", "split", "metric_name", "value"});
                    int ce = csv.column("epoch"), cs = csv.column("split"),
                        cm = csv.column("metric_name"), cv = csv.column("value");
                    std::string prefix =
                        p.inputs.size() > 1 ? file_stem(path) + ":" : std::string();
                    for (const auto& row : csv.rows)
                        merged.rows.push_back({row[static_cast<std::size_t>(ce)],
                                               row[static_cast<std::size_t>(cs)],
                                               prefix + row[static_cast<std::size_t>(cm)],
                                               row[static_cast<std::size_t>(cv)]});
                }
                ds::plot_convergence(merged, p.out);
            } else if (p.kind == "sweep") {
                DEEPSIM_CHECK(p.inputs.size() == 1, "plot --kind sweep takes one CSV");
                ds::plot_sweep(ds::read_csv(p.inputs[0]), p.out);
            } else {
                std::vector<std::pair<std::string, std::vector<double>>> data;
                for (const auto& path : p.inputs) {
                    auto table = mean_dice_by_sample(ds::read_csv(path), path);
                    std::vector<double> values;
                    for (const auto& [id, dice] : table) values.push_back(dice);
                    data.emplace_back(file_stem(path), values);
                }
                ds::plot_boxplot(data, p.out);
            }
            std::cerr << "plot: wrote " << p.out << "\n";

            manifest.config = {{"kind", p.kind}};
            manifest.artifacts = {p.out};
            manifest.wall_clock_seconds = wall();
            ds::write_manifest(manifest, p.out + ".manifest.json");
        }
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "failure: " << err.what() << "\n";
        return 2;
    }
    return 0;
}
