#pragma once

#include <mutex>
#include <thread>
#include <vector>

#include "deepsim/eval.hpp"
#include "deepsim/train.hpp"

namespace deepsim {

struct SweepEntry {
    real lambda = 0;
    double val_mean_dice = 0;
};

struct SweepResult {
    real best_lambda = 0;
    std::vector<SweepEntry> entries;
    Network best_net;
    TrainLog best_log;
};

// Trains one registration model per lambda (all from the same seed) and picks
// the one with the highest validation mean Dice; ties break toward the larger
// lambda, i.e. the smoother model. `jobs` bounds how many runs execute
// concurrently; runs share only the read-only dataset and frozen extractor.
inline SweepResult lambda_sweep(const Dataset& ds, Network* extractor,
                                const TrainConfig& base_config, const std::vector<real>& grid,
                                int jobs = 1,
                                const std::function<void(real, double)>& progress = {}) {
    DEEPSIM_CHECK(!grid.empty(), "lambda_sweep: empty grid");
    DEEPSIM_CHECK(jobs >= 1, "lambda_sweep: jobs must be >= 1");

    if (extractor && metric_needs_extractor(base_config.metric.kind)) {
        extractor->freeze();  // before fan-out so no run races the flag writes
        extractor->set_eval();
    }

    struct Run {
        TrainResult result;
        double val_dice = 0;
    };
    std::vector<Run> runs(grid.size());
    std::mutex progress_mutex;

    auto run_one = [&](std::size_t i) {
        TrainConfig cfg = base_config;
        cfg.lambda = grid[i];
        runs[i].result = train_registration(ds, extractor, cfg);
        auto evals = evaluate_registration(runs[i].result.net, ds, ds.split.val);
        double acc = 0;
        for (const auto& e : evals) acc += e.mean_dice;
        runs[i].val_dice = acc / static_cast<double>(evals.size());
        if (progress) {
            std::lock_guard<std::mutex> lock(progress_mutex);
            progress(grid[i], runs[i].val_dice);
        }
    };

    if (jobs == 1 || grid.size() == 1) {
        for (std::size_t i = 0; i < grid.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        std::mutex next_mutex;
        int workers = std::min<int>(jobs, static_cast<int>(grid.size()));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(next_mutex);
                        if (next >= grid.size()) return;
                        i = next++;
                    }
                    run_one(i);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    SweepResult out;
    std::size_t best = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        out.entries.push_back({grid[i], runs[i].val_dice});
        bool better = runs[i].val_dice > runs[best].val_dice ||
                      (runs[i].val_dice == runs[best].val_dice && grid[i] > grid[best]);
        if (i > 0 && better) best = i;
    }
    out.best_lambda = grid[best];
    out.best_net = std::move(runs[best].result.net);
    out.best_log = std::move(runs[best].result.log);
    return out;
}

}  // namespace deepsim
