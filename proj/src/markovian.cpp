#include "fbsde/markovian.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fbsde/noise.hpp"
#include "fbsde/rng.hpp"

namespace fbsde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double MarkovianState::eval_u(const ProblemSpec& spec, int n, double x) const {
    if (n >= steps) return spec.terminal(VectorXd::Constant(1, x));
    if (u.empty()) return 0.0;  // sweep-0 state
    return u[n](x);
}

MarkovianState markovian_sweep(const MarkovianState& prev, const ProblemSpec& spec,
                               const TimeGrid& grid, const MarkovianConfig& cfg) {
    if (spec.d != 1)
        throw std::invalid_argument("markovian_sweep: regression solver is one-dimensional");
    const int N = grid.steps();
    const int S = cfg.samples;
    const int m = prev.sweep_index + 1;

    const std::uint64_t noise_seed =
        cfg.resample_per_sweep ? CounterRng::mix(cfg.seed + 7919 * m) : cfg.seed;
    const NoiseBlock noise = make_noise(grid, 1, S, spec.measure, noise_seed);

    const double gamma_comp = levy_integral([&](double e) { return spec.measure.gamma(e); },
                                            spec.measure);

    // Forward chain under the previous sweep's value function.
    MatrixXd X(S, N + 1);
    X.col(0).setConstant(spec.xi(0));
    std::vector<VectorXd> m_gamma(N, VectorXd(S));
    const double mark_mean = levy_integral([](double e) { return e; }, spec.measure);
    for (int n = 0; n < N; ++n) {
        const double t = grid.t(n);
        const double dt = grid.dt(n);
        const auto& step = noise.jumps[n];
        for (int i = 0; i < S; ++i) {
            const double x = X(i, n);
            const double y = prev.eval_u(spec, n, x);
            const VectorXd xv = VectorXd::Constant(1, x);
            double xn = x + dt * spec.drift(t, xv, y)(0) +
                        spec.diffusion(t, xv, y)(0, 0) * noise.dW[n](i, 0);
            double mg = 0.0;
            if (spec.beta_linear) {
                double marks_sum = 0.0;
                for (int k = step.offsets[i]; k < step.offsets[i + 1]; ++k) {
                    marks_sum += step.marks[k];
                    mg += spec.measure.gamma(step.marks[k]);
                }
                xn += (marks_sum - dt * mark_mean) * spec.beta_dir(0);
            } else {
                for (int k = step.offsets[i]; k < step.offsets[i + 1]; ++k) {
                    xn += spec.jump_coeff(t, xv, y, step.marks[k])(0);
                    mg += spec.measure.gamma(step.marks[k]);
                }
                xn -= dt * compensator_drift(
                              [&](double e) { return spec.jump_coeff(t, xv, y, e); },
                              spec.measure)(0);
            }
            X(i, n + 1) = xn;
            m_gamma[n](i) = mg - dt * gamma_comp;
        }
        if (!X.col(n + 1).allFinite())
            throw std::runtime_error("markovian_sweep: forward state diverged at step " +
                                     std::to_string(n + 1));
    }

    MarkovianState next;
    next.steps = N;
    next.sweep_index = m;
    next.u.resize(N);
    next.z.resize(N);
    next.gamma_fit.resize(N);
    next.history = prev.history;

    double cond_max = 0.0;

    // Backward pass: y holds Y-hat at step n+1 along the simulated paths.
    VectorXd y(S);
    for (int i = 0; i < S; ++i) y(i) = spec.terminal(VectorXd::Constant(1, X(i, N)));

    // Stabilization box for the value iterate (see MarkovianConfig).
    const double y_lo = y.minCoeff(), y_hi = y.maxCoeff();
    const double margin = cfg.value_margin * std::max(y_hi - y_lo, 1.0);
    const double box_lo = y_lo - margin, box_hi = y_hi + margin;

    for (int n = N - 1; n >= 0; --n) {
        const double t = grid.t(n);
        const double dt = grid.dt(n);
        const VectorXd x = X.col(n);

        next.z[n] = project_z(x, y, noise.dW[n], dt, cfg.basis, cfg.ridge);
        next.gamma_fit[n] = project_gamma(x, y, m_gamma[n], dt, cfg.basis, cfg.ridge);
        cond_max = std::max(cond_max, next.gamma_fit[n].condition);
        for (const auto& f : next.z[n]) cond_max = std::max(cond_max, f.condition);

        // Conditional-expectation recursion with the driver at Y_{n+1}
        // (available backward in time).
        VectorXd target(S);
        for (int i = 0; i < S; ++i) {
            const VectorXd xv = VectorXd::Constant(1, x(i));
            const VectorXd z = VectorXd::Constant(1, next.z[n][0](x(i)));
            const double gm = next.gamma_fit[n](x(i));
            target(i) = std::clamp(y(i) + dt * spec.driver(t, xv, y(i), z, gm), box_lo, box_hi);
        }
        next.u[n] = condexp_regress(x, target, cfg.basis, cfg.ridge);
        next.u[n].value_lo = box_lo;
        next.u[n].value_hi = box_hi;
        cond_max = std::max(cond_max, next.u[n].condition);
        for (int i = 0; i < S; ++i) y(i) = next.u[n](x(i));
    }

    // Sup-distance to the previous sweep on a fixed evaluation grid.
    double sup_delta = 0.0;
    for (int n = 0; n < N; ++n) {
        for (int j = 0; j < cfg.eval_points; ++j) {
            const double xx =
                cfg.basis.lo + (cfg.basis.hi - cfg.basis.lo) * j / (cfg.eval_points - 1);
            sup_delta = std::max(sup_delta,
                                 std::abs(next.eval_u(spec, n, xx) - prev.eval_u(spec, n, xx)));
        }
    }

    next.history.push_back({m, sup_delta, next.u[0](spec.xi(0)), cond_max});
    return next;
}

MarkovianState markovian_solve(const ProblemSpec& spec, const TimeGrid& grid,
                               const MarkovianConfig& cfg) {
    MarkovianState state;
    state.steps = grid.steps();
    for (int m = 0; m < cfg.max_sweeps; ++m) {
        state = markovian_sweep(state, spec, grid, cfg);
        if (state.history.back().sup_delta < cfg.tol && m >= 1) break;
    }
    return state;
}

void write_sweep_csv(const MarkovianState& state, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_sweep_csv: cannot open " + path);
    out << "m,sup_delta,u_at_xi,condition_number_max\n";
    out.precision(12);
    for (const auto& rec : state.history)
        out << rec.m << ',' << rec.sup_delta << ',' << rec.u_at_xi << ',' << rec.cond_max << '\n';
}

}  // namespace fbsde
