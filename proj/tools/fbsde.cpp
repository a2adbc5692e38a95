// Experiment runner for the FBSDEJ solver suite. Subcommands:
//   train      deep scheme training, writes checkpoints.csv + params.bin
//   markovian  regression-based Markovian iteration, writes sweeps.csv
//   rate       time-discretization rate study, writes rate_report.csv
//   errors     error functional vs the exact solution, writes error_report.csv
//   verify     built-in self checks (quadrature, residual, autodiff, moments)
// Exit codes: 0 success, 2 config error, 3 numerical divergence.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <thread>

#include "fbsde/analysis.hpp"
#include "fbsde/config.hpp"
#include "fbsde/markovian.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/quad_oracle.hpp"
#include "fbsde/rng.hpp"

namespace fs = std::filesystem;
using namespace fbsde;

namespace {

void emit_error(int code, const std::string& kind, const std::string& message) {
    nlohmann::json j{{"error", kind}, {"message", message}, {"exit_code", code}};
    std::cerr << j.dump() << "\n";
}

void prepare_output(const RunConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    std::ofstream out(fs::path(cfg.output_dir) / "config_resolved");
    out << "subcommand = " << cfg.subcommand << "\n" << cfg.render();
}

int run_train(const RunConfig& cfg) {
    const ProblemSpec spec = cfg.make_problem();
    const TrainConfig tc = cfg.make_train_config();
    const MultiRunReport report = train_runs(spec, tc, cfg.runs);
    write_checkpoint_csv(report, (fs::path(cfg.output_dir) / "checkpoints.csv").string());
    save_params(report.runs.front().params,
                (fs::path(cfg.output_dir) / "params.bin").string());

    // Per-iteration training losses of each run, for loss-curve consumers.
    {
        std::ofstream out(fs::path(cfg.output_dir) / "loss_history.csv");
        out << "iteration";
        for (std::size_t r = 0; r < report.runs.size(); ++r) out << ",run" << r;
        out << "\n";
        std::size_t iters = 0;
        for (const auto& run : report.runs)
            iters = std::max(iters, run.iteration_loss.size());
        out.precision(12);
        for (std::size_t i = 0; i < iters; ++i) {
            out << i;
            for (const auto& run : report.runs)
                if (i < run.iteration_loss.size())
                    out << ',' << run.iteration_loss[i];
                else
                    out << ',';
            out << "\n";
        }
    }

    bool diverged = false;
    for (const auto& run : report.runs) diverged = diverged || run.diverged;
    const auto& last = report.final_row();
    std::cout << "train: problem=" << cfg.problem << " iterations=" << last.iteration
              << " runs=" << cfg.runs << " y0_mean=" << last.y0_mean
              << " y0_std=" << last.y0_std << " loss_mean=" << last.loss_mean << "\n";
    if (diverged) throw DivergenceError(-1);
    return 0;
}

int run_markovian(const RunConfig& cfg) {
    const ProblemSpec spec = cfg.make_problem();
    const TimeGrid grid = TimeGrid::uniform(cfg.grid_n, spec.terminal_time);
    const MarkovianState state = markovian_solve(spec, grid, cfg.make_markovian_config());
    write_sweep_csv(state, (fs::path(cfg.output_dir) / "sweeps.csv").string());
    const auto& last = state.history.back();
    std::cout << "markovian: sweeps=" << last.m << " sup_delta=" << last.sup_delta
              << " u_at_xi=" << last.u_at_xi << "\n";
    return 0;
}

int run_rate(const RunConfig& cfg) {
    const ProblemSpec spec = cfg.make_problem();
    const RateReport report =
        rate_study(spec, cfg.rate_n_list, cfg.rate_samples, cfg.make_rate_mode(), cfg.seed);
    write_rate_csv(report, (fs::path(cfg.output_dir) / "rate_report.csv").string());
    std::cout << "rate: slope=" << report.slope << " r2=" << report.r2
              << (report.degenerate ? " (degenerate)" : "")
              << (report.noisy ? " (noisy levels)" : "") << "\n";
    return 0;
}

int run_errors(const RunConfig& cfg) {
    const ProblemSpec spec = cfg.make_problem();
    const TimeGrid grid = TimeGrid::uniform(cfg.grid_n, spec.terminal_time);
    ErrorReport report;
    if (cfg.errors_source == "oracle") {
        report = measure_errors(exact_policies(spec), spec, grid, cfg.errors_samples, cfg.seed);
    } else {
        const ParamSet ps = load_params(cfg.errors_params_path);
        report = measure_errors(ps, spec, grid, cfg.errors_samples, cfg.seed);
    }
    write_error_csv(report, (fs::path(cfg.output_dir) / "error_report.csv").string());
    std::cout << "errors: y_sup_sq=" << report.y_err << " z_sum_sq=" << report.z_err
              << " gamma_sum_sq=" << report.gamma_err << " total=" << report.total() << "\n";
    return 0;
}

int run_verify(const RunConfig& cfg) {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok, double value) {
        std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  (" << value << ")\n";
        if (!ok) ++failures;
    };

    const ProblemSpec spec = cfg.make_problem();

    // Quadrature exactness on a polynomial of degree 2q-1.
    {
        const auto& m = spec.measure;
        const int deg = 2 * m.quad_order() - 1;
        const double got = levy_integral([&](double e) { return std::pow(e, deg); }, m);
        check("levy_integral odd-degree polynomial -> 0", std::abs(got) < 1e-12, got);
        const double got2 = levy_integral([](double e) { return e * e; }, m);
        const double d3 = m.delta() * m.delta() * m.delta();
        const double want2 = m.total_intensity() / (2.0 * m.delta()) * (2.0 / 3.0) * d3;
        check("levy_integral e^2", std::abs(got2 - want2) < 1e-10, got2);
    }

    // Nonlocal kernel identity for the benchmark solution.
    if (spec.has_exact()) {
        const double t = 0.3;
        Eigen::VectorXd x = Eigen::VectorXd::Constant(spec.d, 0.7 / spec.d);
        const double got = spec.exact_gamma(t, x);
        const double xbar = x.sum();
        const double want = 2.0 * (std::sin(1.0) - 1.0) * std::sin(xbar + t);
        check("gamma kernel matches 2(sin1-1)sin(x+t)", std::abs(got - want) < 1e-8, got - want);
    }

    // PIDE residual of the exact solution on an interior grid.
    if (spec.has_exact() && spec.d <= 4) {
        double worst = 0.0;
        for (int i = 1; i <= 10; ++i)
            for (int j = 1; j <= 10; ++j) {
                const double t = spec.terminal_time * i / 11.0;
                Eigen::VectorXd x =
                    Eigen::VectorXd::Constant(spec.d, (-2.0 + 4.0 * j / 11.0) / spec.d);
                worst = std::max(worst, std::abs(pide_residual(
                                            spec, t, x,
                                            [&](double tt, const Eigen::VectorXd& xx) {
                                                return spec.exact_u(tt, xx);
                                            })));
            }
        check("pide_residual(exact_u) < 1e-4 on 10x10 grid", worst < 1e-4, worst);
    }

    // Autodiff vs central finite differences on a small random net.
    {
        const int d = std::min(spec.d, 3);
        NetConfig nc;
        nc.activation = Activation::tanh;
        ParamSet ps = init_params(nc, d, 1, 1234, 0.5);
        Tape tape;
        const TapeBinding bind = bind_params(tape, ps);
        Eigen::MatrixXd input = Eigen::MatrixXd::Random(4, d + 1);
        const int in = tape.input(input);
        const int out = z_net_forward(tape, ps, bind, 0, in);
        const int loss = tape.mean_all(tape.square(out));
        tape.backward(loss);
        const auto grad = collect_grad(tape, bind, ps);
        double max_rel = 0.0;
        for (std::size_t k = 1; k < ps.flat.size(); k += 97) {
            const double h = 1e-6;
            const double orig = ps.flat[k];
            auto eval = [&](double v) {
                ps.flat[k] = v;
                Tape t2;
                const TapeBinding b2 = bind_params(t2, ps);
                const int o2 = z_net_forward(t2, ps, b2, 0, t2.input(input));
                return t2.scalar(t2.mean_all(t2.square(o2)));
            };
            const double fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            ps.flat[k] = orig;
            const double denom = std::max({1e-8, std::abs(fd), std::abs(grad[k])});
            max_rel = std::max(max_rel, std::abs(fd - grad[k]) / denom);
        }
        check("autodiff matches finite differences", max_rel < 1e-5, max_rel);
    }

    // Moment smoke test on the noise generator.
    {
        const TimeGrid grid = TimeGrid::uniform(4, 1.0);
        const NoiseBlock noise = make_noise(grid, 1, 20000, spec.measure, cfg.seed + 5);
        double mean = 0.0, var = 0.0;
        long jumps = 0;
        for (int n = 0; n < 4; ++n) {
            mean += noise.dW[n].col(0).mean();
            var += noise.dW[n].col(0).squaredNorm() / noise.samples;
            jumps += noise.total_jumps(n);
        }
        mean /= 4.0;
        var /= 4.0;
        const double want_var = 0.25;
        check("brownian variance ~ dt", std::abs(var - want_var) < 0.01, var);
        const double jump_rate = static_cast<double>(jumps) / (4.0 * noise.samples);
        const double want_rate = spec.measure.total_intensity() * 0.25;
        check("jump count mean ~ intensity*dt", std::abs(jump_rate - want_rate) < 0.02,
              jump_rate);
    }

    // Determinism.
    {
        const TimeGrid grid = TimeGrid::uniform(3, 1.0);
        const NoiseBlock a = make_noise(grid, 2, 64, spec.measure, 42);
        const NoiseBlock b = make_noise(grid, 2, 64, spec.measure, 42);
        bool same = true;
        for (int n = 0; n < 3; ++n) {
            same = same && a.dW[n] == b.dW[n] && a.jumps[n].marks == b.jumps[n].marks &&
                   a.jumps[n].offsets == b.jumps[n].offsets;
        }
        check("same seed reproduces the noise block", same, same ? 1.0 : 0.0);
    }

    std::cout << (failures == 0 ? "verify: all checks passed\n"
                                : "verify: " + std::to_string(failures) + " check(s) failed\n");
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep FBSDE / PIDE solver suite"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;

    // Shared flags registered on each subcommand; values land in overrides
    // so that flag > file > default precedence is explicit.
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (flat dotted keys)");
        auto opt = [&overrides, sub](const std::string& flag, const std::string& key,
                                     const std::string& desc) {
            sub->add_option_function<std::string>(
                flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); },
                desc);
        };
        opt("--problem", "problem", "example1 | example_highdim");
        opt("--d", "problem.d", "dimension for example_highdim");
        opt("--T", "problem.T", "terminal time");
        opt("--delta", "problem.delta", "mark support half-width");
        opt("--mark-mode", "problem.mark_mode", "aggregate | per_coordinate");
        opt("--quad-order", "quad_order", "Gauss-Legendre order for mark integrals");
        opt("--n", "grid.n", "time steps");
        opt("--seed", "seed", "base RNG seed");
        opt("--out", "output_dir", "output directory");
        opt("--runs", "runs", "independent runs");
        opt("--determinism", "determinism", "strict | fast");
        return opt;
    };

    auto* train_cmd = app.add_subcommand("train", "train the deep FBSDE scheme");
    {
        auto opt = add_common(train_cmd);
        opt("--iters", "train.iterations", "SGD iterations");
        opt("--batch", "train.batch", "minibatch size");
        opt("--lr", "train.lr", "learning rate");
        opt("--optimizer", "train.optimizer", "adam | sgd");
        opt("--y0-init", "train.y0_init", "zero | g_at_xi");
        opt("--y0-lr-mult", "train.y0_lr_mult", "learning-rate multiplier for Y0");
        opt("--z-lr-mult", "train.z_lr_mult", "learning-rate multiplier for the Z nets");
        opt("--u-lr-mult", "train.u_lr_mult", "learning-rate multiplier for the U nets");
        opt("--grad-clip", "train.grad_clip", "global-norm gradient clip (0 = off)");
        opt("--z-init-scale", "train.z_final_init_scale", "Z-net output layer init scale");
        opt("--u-init-scale", "train.u_final_init_scale", "U-net output layer init scale");
        opt("--checkpoint-every", "train.checkpoint_every", "checkpoint cadence");
    }
    auto* markovian_cmd = app.add_subcommand("markovian", "regression Markovian iteration");
    {
        auto opt = add_common(markovian_cmd);
        opt("--samples", "markovian.samples", "Monte Carlo sample paths");
        opt("--sweeps", "markovian.sweeps", "max sweeps");
        opt("--tol", "markovian.tol", "sup-delta stop tolerance");
        opt("--degree", "markovian.degree", "basis degree");
        opt("--basis", "markovian.basis", "polynomial | piecewise_linear");
    }
    auto* rate_cmd = app.add_subcommand("rate", "time-discretization rate study");
    {
        auto opt = add_common(rate_cmd);
        opt("--n-list", "rate.n_list", "comma-separated grid sizes");
        opt("--samples", "rate.samples", "Monte Carlo samples per level");
        opt("--mode", "rate.mode", "oracle | markovian_quadrature");
    }
    auto* errors_cmd = app.add_subcommand("errors", "error functional vs exact solution");
    {
        auto opt = add_common(errors_cmd);
        opt("--samples", "errors.samples", "Monte Carlo samples");
        opt("--source", "errors.source", "oracle | params");
        opt("--params", "errors.params_path", "trained checkpoint file");
    }
    auto* verify_cmd = app.add_subcommand("verify", "run built-in self checks");
    add_common(verify_cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        // Seed default from the environment unless given explicitly.
        if (const char* env_seed = std::getenv("FBSDE_SEED")) cfg.seed = std::strtoull(env_seed, nullptr, 10);
        if (!config_path.empty()) parse_config_file(cfg, config_path);
        for (const auto& [key, value] : overrides) cfg.apply_key(key, value);

        if (train_cmd->parsed()) cfg.subcommand = "train";
        if (markovian_cmd->parsed()) cfg.subcommand = "markovian";
        if (rate_cmd->parsed()) cfg.subcommand = "rate";
        if (errors_cmd->parsed()) cfg.subcommand = "errors";
        if (verify_cmd->parsed()) cfg.subcommand = "verify";
        cfg.validate();

        set_parallel_threads(cfg.determinism == "fast"
                                 ? static_cast<int>(std::thread::hardware_concurrency())
                                 : 1);
        prepare_output(cfg);

        if (cfg.subcommand == "train") return run_train(cfg);
        if (cfg.subcommand == "markovian") return run_markovian(cfg);
        if (cfg.subcommand == "rate") return run_rate(cfg);
        if (cfg.subcommand == "errors") return run_errors(cfg);
        if (cfg.subcommand == "verify") return run_verify(cfg);
        emit_error(2, "config", "unknown subcommand");
        return 2;
    } catch (const ConfigError& e) {
        emit_error(2, "config", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        emit_error(3, "divergence", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        emit_error(2, "config", e.what());
        return 2;
    } catch (const std::exception& e) {
        emit_error(1, "runtime", e.what());
        return 1;
    }
}
