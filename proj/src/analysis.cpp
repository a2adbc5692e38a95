#include "fbsde/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fbsde/parallel.hpp"
#include "fbsde/rng.hpp"

namespace fbsde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

bool forward_state_independent(const ProblemSpec& spec) {
    return spec.drift_zero && spec.sigma_scalar_diag && spec.beta_linear &&
           !spec.y_coupled_forward;
}

// Accumulates the error functional over chunks of simulated paths.
struct ErrorAccumulator {
    int steps = 0;
    std::vector<double> y_sum, y_sumsq;  // per node 0..N of dy^2 and dy^4
    double z_sum = 0.0, z_sumsq = 0.0;   // per-sample dt-weighted path sums
    double g_sum = 0.0, g_sumsq = 0.0;
    long count = 0;

    explicit ErrorAccumulator(int N) : steps(N), y_sum(N + 1, 0.0), y_sumsq(N + 1, 0.0) {}

    void merge(const ErrorAccumulator& other) {
        for (std::size_t n = 0; n < y_sum.size(); ++n) {
            y_sum[n] += other.y_sum[n];
            y_sumsq[n] += other.y_sumsq[n];
        }
        z_sum += other.z_sum;
        z_sumsq += other.z_sumsq;
        g_sum += other.g_sum;
        g_sumsq += other.g_sumsq;
        count += other.count;
    }

    void add(const PathBatch& paths, const ProblemSpec& spec, const TimeGrid& grid) {
        const int S = paths.samples();
        const int N = grid.steps();
        for (int i = 0; i < S; ++i) {
            double zpath = 0.0, gpath = 0.0;
            for (int n = 0; n <= N; ++n) {
                const VectorXd x = paths.X[n].row(i).transpose();
                const double dy = paths.Y[n](i) - spec.exact_u(grid.t(n), x);
                y_sum[n] += dy * dy;
                y_sumsq[n] += dy * dy * dy * dy;
                if (n < N) {
                    const double dz = (paths.Z[n].row(i).transpose() - spec.exact_z(grid.t(n), x))
                                          .squaredNorm();
                    const double dg = paths.Gamma[n](i) - spec.exact_gamma(grid.t(n), x);
                    zpath += dz * grid.dt(n);
                    gpath += dg * dg * grid.dt(n);
                }
            }
            z_sum += zpath;
            z_sumsq += zpath * zpath;
            g_sum += gpath;
            g_sumsq += gpath * gpath;
        }
        count += S;
    }

    ErrorReport finalize(const ProblemSpec& spec, const TimeGrid& grid) const {
        ErrorReport rep;
        rep.samples = static_cast<int>(count);
        rep.h = grid.h();
        int argmax = 0;
        for (int n = 0; n <= steps; ++n)
            if (y_sum[n] > y_sum[argmax]) argmax = n;
        rep.y_err = y_sum[argmax] / count;
        rep.y_se = std::sqrt(std::max(0.0, y_sumsq[argmax] / count - rep.y_err * rep.y_err) /
                             count);
        rep.z_err = z_sum / count;
        rep.z_se = std::sqrt(std::max(0.0, z_sumsq / count - rep.z_err * rep.z_err) / count);
        rep.gamma_err = g_sum / count;
        rep.gamma_se =
            std::sqrt(std::max(0.0, g_sumsq / count - rep.gamma_err * rep.gamma_err) / count);
        if (!forward_state_independent(spec))
            throw std::invalid_argument(
                "measure_errors: X reference requires state-independent forward coefficients");
        rep.x_err = 0.0;  // Euler node values coincide with the true SDE here
        rep.x_se = 0.0;
        return rep;
    }
};

std::uint64_t chunk_seed(std::uint64_t seed, int chunk) {
    return CounterRng::mix(seed ^ (0x51ed2701a3c5e891ull + static_cast<std::uint64_t>(chunk)));
}

}  // namespace

ErrorReport measure_errors_paths(const PathBatch& paths, const ProblemSpec& spec,
                                 const TimeGrid& grid) {
    if (!spec.has_exact() || !spec.exact_grad)
        throw std::invalid_argument("measure_errors: problem has no exact solution");
    ErrorAccumulator acc(grid.steps());
    acc.add(paths, spec, grid);
    return acc.finalize(spec, grid);
}

namespace {

template <class RolloutFn>
ErrorReport measure_errors_chunked(RolloutFn&& simulate, const ProblemSpec& spec,
                                   const TimeGrid& grid, int samples, std::uint64_t seed,
                                   int chunk_size) {
    if (!spec.has_exact() || !spec.exact_grad)
        throw std::invalid_argument("measure_errors: problem has no exact solution");
    if (samples < 2) throw std::invalid_argument("measure_errors: need at least 2 samples");

    std::vector<int> sizes;
    for (int done = 0; done < samples; done += chunk_size)
        sizes.push_back(std::min(chunk_size, samples - done));

    auto run_chunk = [&](int chunk) {
        ErrorAccumulator acc(grid.steps());
        const NoiseBlock noise =
            make_noise(grid, spec.d, sizes[chunk], spec.measure, chunk_seed(seed, chunk));
        acc.add(simulate(noise), spec, grid);
        return acc;
    };

    ErrorAccumulator acc(grid.steps());
    const int threads = parallel_threads().load();
    if (threads <= 1) {
        for (int c = 0; c < static_cast<int>(sizes.size()); ++c) acc.merge(run_chunk(c));
    } else {
        // Waves of async tasks, merged in chunk order so results do not
        // depend on scheduling.
        for (std::size_t base = 0; base < sizes.size(); base += threads) {
            std::vector<std::future<ErrorAccumulator>> wave;
            const std::size_t end = std::min(sizes.size(), base + threads);
            for (std::size_t c = base; c < end; ++c)
                wave.push_back(std::async(std::launch::async, run_chunk, static_cast<int>(c)));
            for (auto& f : wave) acc.merge(f.get());
        }
    }
    return acc.finalize(spec, grid);
}

}  // namespace

ErrorReport measure_errors(const ParamSet& ps, const ProblemSpec& spec, const TimeGrid& grid,
                           int samples, std::uint64_t seed) {
    return measure_errors_chunked(
        [&](const NoiseBlock& noise) {
            Tape tape;
            const TapeBinding bind = bind_params(tape, ps);
            return rollout(tape, ps, bind, spec, grid, noise).paths;
        },
        spec, grid, samples, seed, 4096);
}

ErrorReport measure_errors(const OraclePolicies& pol, const ProblemSpec& spec,
                           const TimeGrid& grid, int samples, std::uint64_t seed) {
    return measure_errors_chunked(
        [&](const NoiseBlock& noise) { return rollout_policies(pol, spec, grid, noise); }, spec,
        grid, samples, seed, 16384);
}

namespace {

// Shared path for value-function sources: simulate the forward chain, then
// read Y, Z, Gamma off the fitted per-step functions.
template <class UFn, class ZFn, class GFn>
PathBatch value_function_paths(UFn&& u_at, ZFn&& z_at, GFn&& g_at, const ProblemSpec& spec,
                               const TimeGrid& grid, const NoiseBlock& noise) {
    if (spec.d != 1)
        throw std::invalid_argument("measure_errors: value-function sources are one-dimensional");
    const int S = noise.samples;
    const int N = grid.steps();
    PathBatch paths;
    paths.X.assign(N + 1, MatrixXd(S, 1));
    paths.Y.assign(N + 1, VectorXd(S));
    paths.Z.assign(N, MatrixXd(S, 1));
    paths.Gamma.assign(N, VectorXd(S));

    const double mark_mean = levy_integral([](double e) { return e; }, spec.measure);
    paths.X[0].col(0).setConstant(spec.xi(0));
    for (int n = 0; n <= N; ++n) {
        for (int i = 0; i < S; ++i) {
            const double x = paths.X[n](i, 0);
            paths.Y[n](i) = u_at(n, x);
            if (n < N) {
                paths.Z[n](i, 0) = z_at(n, x);
                paths.Gamma[n](i) = g_at(n, x);
            }
        }
        if (n == N) break;
        const double t = grid.t(n);
        const double dt = grid.dt(n);
        const auto& step = noise.jumps[n];
        for (int i = 0; i < S; ++i) {
            const double x = paths.X[n](i, 0);
            const double y = paths.Y[n](i);
            const VectorXd xv = VectorXd::Constant(1, x);
            double xn = x + dt * spec.drift(t, xv, y)(0) +
                        spec.diffusion(t, xv, y)(0, 0) * noise.dW[n](i, 0);
            double marks_sum = 0.0;
            for (int k = step.offsets[i]; k < step.offsets[i + 1]; ++k)
                marks_sum += step.marks[k];
            if (spec.beta_linear)
                xn += (marks_sum - dt * mark_mean) * spec.beta_dir(0);
            else {
                for (int k = step.offsets[i]; k < step.offsets[i + 1]; ++k)
                    xn += spec.jump_coeff(t, xv, y, step.marks[k])(0);
                xn -= dt * compensator_drift(
                              [&](double e) { return spec.jump_coeff(t, xv, y, e); },
                              spec.measure)(0);
            }
            paths.X[n + 1](i, 0) = xn;
        }
    }
    return paths;
}

}  // namespace

ErrorReport measure_errors(const MarkovianState& state, const ProblemSpec& spec,
                           const TimeGrid& grid, int samples, std::uint64_t seed) {
    return measure_errors_chunked(
        [&](const NoiseBlock& noise) {
            return value_function_paths(
                [&](int n, double x) { return state.eval_u(spec, n, x); },
                [&](int n, double x) { return state.z[n][0](x); },
                [&](int n, double x) { return state.gamma_fit[n](x); }, spec, grid, noise);
        },
        spec, grid, samples, seed, 16384);
}

ErrorReport measure_errors(const QuadratureSolution& sol, const ProblemSpec& spec,
                           const TimeGrid& grid, int samples, std::uint64_t seed) {
    return measure_errors_chunked(
        [&](const NoiseBlock& noise) {
            return value_function_paths(
                [&](int n, double x) { return sol.eval_u(spec, n, x); },
                [&](int n, double x) { return sol.z[n](x); },
                [&](int n, double x) { return sol.gamma[n](x); }, spec, grid, noise);
        },
        spec, grid, samples, seed, 16384);
}

void write_error_csv(const ErrorReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_error_csv: cannot open " + path);
    out << "metric,value,stderr\n";
    out.precision(12);
    out << "x_sup_sq," << report.x_err << ',' << report.x_se << '\n';
    out << "y_sup_sq," << report.y_err << ',' << report.y_se << '\n';
    out << "z_sum_sq," << report.z_err << ',' << report.z_se << '\n';
    out << "gamma_sum_sq," << report.gamma_err << ',' << report.gamma_se << '\n';
    out << "total," << report.total() << ",\n";
    out << "samples," << report.samples << ",\n";
    out << "h," << report.h << ",\n";
}

RateReport rate_study(const ProblemSpec& spec, const std::vector<int>& n_list, int samples,
                      RateMode mode, std::uint64_t seed) {
    if (n_list.size() < 3) throw std::invalid_argument("rate_study: need at least 3 grid levels");
    for (std::size_t i = 1; i < n_list.size(); ++i)
        if (n_list[i] <= n_list[i - 1])
            throw std::invalid_argument("rate_study: n_list must be increasing");

    RateReport report;
    for (std::size_t i = 0; i < n_list.size(); ++i) {
        const int N = n_list[i];
        const TimeGrid grid = TimeGrid::uniform(N, spec.terminal_time);
        ErrorReport err;
        if (mode == RateMode::oracle_policy) {
            err = measure_errors(exact_policies(spec), spec, grid, samples,
                                 CounterRng::mix(seed + 31 * N));
        } else {
            if (spec.d != 1)
                throw std::invalid_argument("rate_study: markovian_quadrature mode needs d = 1");
            const QuadratureSolution sol = quadrature_backward_solve(spec, grid);
            err = measure_errors(sol, spec, grid, samples, CounterRng::mix(seed + 31 * N));
        }
        RatePoint pt;
        pt.n = N;
        pt.h = grid.h();
        pt.error = err.total();
        pt.se = err.x_se + err.y_se + err.z_se + err.gamma_se;
        report.points.push_back(pt);
    }

    // Degenerate when the errors sit at machine zero.
    bool all_zero = true;
    for (const auto& pt : report.points) all_zero = all_zero && pt.error <= 1e-18;
    if (all_zero) {
        report.degenerate = true;
        report.slope = std::numeric_limits<double>::quiet_NaN();
        report.intercept = std::numeric_limits<double>::quiet_NaN();
        report.r2 = std::numeric_limits<double>::quiet_NaN();
        return report;
    }

    const int n = static_cast<int>(report.points.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (const auto& pt : report.points) {
        const double lx = std::log(pt.h);
        const double ly = std::log(pt.error);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        syy += ly * ly;
    }
    const double denom = n * sxx - sx * sx;
    report.slope = (n * sxy - sx * sy) / denom;
    report.intercept = (sy - report.slope * sx) / n;
    const double ss_tot = syy - sy * sy / n;
    double ss_res = 0.0;
    for (const auto& pt : report.points) {
        const double pred = report.intercept + report.slope * std::log(pt.h);
        const double r = std::log(pt.error) - pred;
        ss_res += r * r;
    }
    report.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;

    for (std::size_t i = 0; i + 1 < report.points.size(); ++i) {
        const auto& a = report.points[i];
        const auto& b = report.points[i + 1];
        if (std::abs(a.error - b.error) < 2.0 * (a.se + b.se)) report.noisy = true;
    }
    return report;
}

void write_rate_csv(const RateReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_rate_csv: cannot open " + path);
    out << "h,error,stderr\n";
    out.precision(12);
    for (const auto& pt : report.points)
        out << pt.h << ',' << pt.error << ',' << pt.se << '\n';
    out << "slope," << report.slope << ',' << report.r2 << '\n';
}

PosteriorCheck posterior_check(const std::vector<std::pair<double, double>>& loss_and_err2) {
    PosteriorCheck check;
    check.n = static_cast<int>(loss_and_err2.size());
    if (check.n < 2) {
        check.degenerate = true;
        return check;
    }

    auto ranks = [](std::vector<double> v) {
        const int n = static_cast<int>(v.size());
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        int i = 0;
        while (i < n) {
            int j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (i + j) + 1.0;  // average rank for ties
            for (int k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };

    std::vector<double> loss(check.n), err(check.n);
    for (int i = 0; i < check.n; ++i) {
        loss[i] = loss_and_err2[i].first;
        err[i] = loss_and_err2[i].second;
    }
    const bool loss_const = *std::max_element(loss.begin(), loss.end()) ==
                            *std::min_element(loss.begin(), loss.end());
    const bool err_const =
        *std::max_element(err.begin(), err.end()) == *std::min_element(err.begin(), err.end());
    if (loss_const || err_const) {
        check.degenerate = true;
    } else {
        const auto rl = ranks(loss);
        const auto re = ranks(err);
        double ml = 0, me = 0;
        for (int i = 0; i < check.n; ++i) {
            ml += rl[i];
            me += re[i];
        }
        ml /= check.n;
        me /= check.n;
        double num = 0, dl = 0, de = 0;
        for (int i = 0; i < check.n; ++i) {
            num += (rl[i] - ml) * (re[i] - me);
            dl += (rl[i] - ml) * (rl[i] - ml);
            de += (re[i] - me) * (re[i] - me);
        }
        check.spearman = num / std::sqrt(dl * de);
    }

    // err2 ~ a + b*loss by least squares, coefficients clamped nonnegative.
    double sl = 0, se = 0, sll = 0, sle = 0;
    for (int i = 0; i < check.n; ++i) {
        sl += loss[i];
        se += err[i];
        sll += loss[i] * loss[i];
        sle += loss[i] * err[i];
    }
    const double n = check.n;
    const double denom = n * sll - sl * sl;
    double b = denom != 0.0 ? (n * sle - sl * se) / denom : 0.0;
    double a = (se - b * sl) / n;
    if (b < 0.0) {
        b = 0.0;
        a = se / n;
    }
    if (a < 0.0) {
        a = 0.0;
        b = sll > 0.0 ? sle / sll : 0.0;
        if (b < 0.0) b = 0.0;
    }
    check.a = a;
    check.b = b;
    return check;
}

}  // namespace fbsde
