#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbsde/net.hpp"
#include "fbsde/optimizer.hpp"
#include "fbsde/problem.hpp"
#include "fbsde/rollout.hpp"

namespace fbsde {

struct TrainConfig {
    int steps = 20;  // time discretization N
    int batch = 256;
    int iterations = 4000;
    int eval_batch = 256;
    int checkpoint_every = 250;
    OptimizerConfig opt;
    NetConfig net;
    std::uint64_t seed = 0;
    double policy_clamp = 20.0;
    enum class Y0Init : std::uint8_t { zero, g_at_xi } y0_init = Y0Init::zero;

    void validate() const;
};

struct CheckpointRow {
    int iteration = 0;
    double loss = 0.0;  // terminal loss on a fresh evaluation batch
    double y0 = 0.0;
    double wall_seconds = 0.0;
};

struct TrainReport {
    std::vector<double> iteration_loss;  // training-batch loss per iteration
    std::vector<CheckpointRow> checkpoints;
    ParamSet params;
    bool diverged = false;
    int diverged_at = -1;
};

// One SGD run: fresh noise minibatch per iteration, checkpoint rows on a
// fixed schedule (iteration 0, every checkpoint_every, and the last one).
// On divergence the parameters roll back to the last checkpoint.
TrainReport train(const ProblemSpec& spec, const TrainConfig& cfg);

// Aggregates over independent runs (seeds derived from cfg.seed); the
// reported value/std convention follows the per-checkpoint mean and sample
// standard deviation of Y0 across runs, with the loss averaged over the
// runs' evaluation batches.
struct MultiRunRow {
    int iteration = 0;
    double loss_mean = 0.0;
    double y0_mean = 0.0;
    double y0_std = 0.0;
    double wall_seconds = 0.0;
};

struct MultiRunReport {
    std::vector<MultiRunRow> rows;
    std::vector<TrainReport> runs;

    const MultiRunRow& final_row() const { return rows.back(); }
};

MultiRunReport train_runs(const ProblemSpec& spec, const TrainConfig& cfg, int runs);

void write_checkpoint_csv(const MultiRunReport& report, const std::string& path);

}  // namespace fbsde
