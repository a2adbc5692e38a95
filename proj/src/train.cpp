#include "fbsde/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fbsde/rng.hpp"

namespace fbsde {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t k) {
    return CounterRng::mix(CounterRng::mix(seed ^ (tag * 0x9e3779b97f4a7c15ull)) + k);
}

constexpr std::uint64_t kTagRun = 11;
constexpr std::uint64_t kTagBatch = 12;
constexpr std::uint64_t kTagEval = 13;

}  // namespace

void TrainConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
    if (batch < 2) throw std::invalid_argument("TrainConfig: batch must be >= 2");
    if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be >= 0");
    if (eval_batch < 2) throw std::invalid_argument("TrainConfig: eval_batch must be >= 2");
    if (checkpoint_every < 1) throw std::invalid_argument("TrainConfig: checkpoint_every >= 1");
}

TrainReport train(const ProblemSpec& spec, const TrainConfig& cfg) {
    cfg.validate();
    const TimeGrid grid = TimeGrid::uniform(cfg.steps, spec.terminal_time);

    const double y0_init =
        cfg.y0_init == TrainConfig::Y0Init::g_at_xi ? spec.terminal(spec.xi) : 0.0;
    TrainReport report;
    report.params = init_params(cfg.net, spec.d, cfg.steps, cfg.seed, y0_init);
    // Tie the trust region to the step size: |Z| dt must stay well under 1
    // or the driver's y*z feedback can oscillate unstably.
    report.params.policy_clamp =
        cfg.policy_clamp > 0.0 ? std::min(cfg.policy_clamp, 0.5 / grid.h()) : 0.0;
    report.iteration_loss.reserve(cfg.iterations);

    OptimizerState opt_state;
    opt_state.reset(report.params.flat.size());

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    auto eval_loss = [&](int iter) {
        const NoiseBlock eval_noise = make_noise(grid, spec.d, cfg.eval_batch, spec.measure,
                                                 derive_seed(cfg.seed, kTagEval, iter));
        return terminal_loss(report.params, spec, grid, eval_noise);
    };

    auto checkpoint = [&](int iter) {
        report.checkpoints.push_back({iter, eval_loss(iter), report.params.y0(), elapsed()});
    };

    checkpoint(0);
    std::vector<double> last_good = report.params.flat;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        const NoiseBlock noise = make_noise(grid, spec.d, cfg.batch, spec.measure,
                                            derive_seed(cfg.seed, kTagBatch, iter));
        try {
            Tape tape;
            tape.check_finite = (iter % cfg.checkpoint_every == 0);
            const TapeBinding bind = bind_params(tape, report.params);
            const RolloutGraph g = rollout(tape, report.params, bind, spec, grid, noise);
            const double batch_loss = tape.scalar(g.loss);
            tape.backward(g.loss);
            std::vector<double> grad = collect_grad(tape, bind, report.params);
            for (double gv : grad)
                if (!std::isfinite(gv)) throw DivergenceError(-1);
            clip_gradient(grad, cfg.opt.grad_clip);
            report.iteration_loss.push_back(batch_loss);
            optimizer_step(report.params, grad, opt_state, cfg.opt);
        } catch (const DivergenceError&) {
            report.diverged = true;
            report.diverged_at = iter;
            report.params.flat = last_good;  // roll back to the last checkpoint
            break;
        } catch (const Tape::AutodiffError&) {
            report.diverged = true;
            report.diverged_at = iter;
            report.params.flat = last_good;
            break;
        }
        const int done = iter + 1;
        if (done % cfg.checkpoint_every == 0 || done == cfg.iterations) {
            checkpoint(done);
            last_good = report.params.flat;
        }
    }
    return report;
}

MultiRunReport train_runs(const ProblemSpec& spec, const TrainConfig& cfg, int runs) {
    if (runs < 1) throw std::invalid_argument("train_runs: runs must be >= 1");
    MultiRunReport report;
    report.runs.reserve(runs);
    for (int r = 0; r < runs; ++r) {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = derive_seed(cfg.seed, kTagRun, r);
        report.runs.push_back(train(spec, run_cfg));
    }

    std::size_t rows = report.runs.front().checkpoints.size();
    for (const auto& run : report.runs) rows = std::min(rows, run.checkpoints.size());
    report.rows.resize(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        MultiRunRow row;
        row.iteration = report.runs.front().checkpoints[i].iteration;
        double loss = 0.0, y0 = 0.0, y0sq = 0.0, wall = 0.0;
        for (const auto& run : report.runs) {
            loss += run.checkpoints[i].loss;
            y0 += run.checkpoints[i].y0;
            wall += run.checkpoints[i].wall_seconds;
        }
        loss /= runs;
        y0 /= runs;
        wall /= runs;
        for (const auto& run : report.runs) {
            const double d = run.checkpoints[i].y0 - y0;
            y0sq += d * d;
        }
        row.loss_mean = loss;
        row.y0_mean = y0;
        row.y0_std = runs > 1 ? std::sqrt(y0sq / (runs - 1)) : 0.0;
        row.wall_seconds = wall;
        report.rows[i] = row;
    }
    return report;
}

void write_checkpoint_csv(const MultiRunReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_checkpoint_csv: cannot open " + path);
    out << "iteration,loss_mean,y0_mean,y0_std,wall_seconds\n";
    out.precision(12);
    for (const auto& row : report.rows)
        out << row.iteration << ',' << row.loss_mean << ',' << row.y0_mean << ',' << row.y0_std
            << ',' << row.wall_seconds << '\n';
}

}  // namespace fbsde
