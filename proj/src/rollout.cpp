#include "fbsde/rollout.hpp"

#include <cmath>

namespace fbsde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Non-drift forward increment over step n: sigma*dW plus interval jump sum
// minus the compensator drift. Never depends on the trainable state for the
// supported problems, so it is computed off-tape.
MatrixXd forward_noise_increment(const ProblemSpec& spec, const TimeGrid& grid,
                                 const NoiseBlock& noise, int n, const MatrixXd& Xn,
                                 const VectorXd& Yn) {
    const int S = noise.samples;
    const int d = spec.d;
    const double t = grid.t(n);
    const double dt = grid.dt(n);
    MatrixXd inc(S, d);

    if (spec.sigma_scalar_diag) {
        inc = spec.sigma_scale * noise.dW[n];
    } else {
        for (int i = 0; i < S; ++i)
            inc.row(i) =
                (spec.diffusion(t, Xn.row(i).transpose(), Yn(i)) * noise.dW[n].row(i).transpose())
                    .transpose();
    }

    const auto& step = noise.jumps[n];
    if (spec.beta_linear) {
        // beta(e) = e * dir: jump sum is (sum of marks) * dir and the
        // compensator is dt * (integral e lambda(de)) * dir.
        static thread_local double cached_mean = 0.0;
        static thread_local const JumpMeasureSpec* cached_measure = nullptr;
        if (cached_measure != &spec.measure) {
            cached_mean = levy_integral([](double e) { return e; }, spec.measure);
            cached_measure = &spec.measure;
        }
        for (int i = 0; i < S; ++i) {
            double s = 0.0;
            for (int k = step.offsets[i]; k < step.offsets[i + 1]; ++k) s += step.marks[k];
            s -= dt * cached_mean;
            if (s != 0.0) inc.row(i) += s * spec.beta_dir.transpose();
        }
    } else {
        for (int i = 0; i < S; ++i) {
            const VectorXd xi_row = Xn.row(i).transpose();
            VectorXd acc = VectorXd::Zero(d);
            for (int k = step.offsets[i]; k < step.offsets[i + 1]; ++k)
                acc += spec.jump_coeff(t, xi_row, Yn(i), step.marks[k]);
            acc -= dt * compensator_drift(
                            [&](double e) { return spec.jump_coeff(t, xi_row, Yn(i), e); },
                            spec.measure);
            inc.row(i) += acc.transpose();
        }
    }
    return inc;
}

void check_state(const MatrixXd& X, const VectorXd& Y, int step) {
    if (!X.allFinite() || !Y.allFinite()) throw DivergenceError(step);
}

std::pair<std::vector<std::int32_t>, std::vector<double>> mark_rows(
    const NoiseBlock::StepJumps& step, int samples) {
    std::vector<std::int32_t> idx;
    std::vector<double> marks;
    idx.reserve(step.marks.size());
    marks.reserve(step.marks.size());
    for (int i = 0; i < samples; ++i)
        for (int k = step.offsets[i]; k < step.offsets[i + 1]; ++k) {
            idx.push_back(i);
            marks.push_back(step.marks[k]);
        }
    return {std::move(idx), std::move(marks)};
}

}  // namespace

namespace {

// Policy trust region: s*tanh(v/s), identity when the clamp is off.
int saturate(Tape& tape, int node, double s) {
    if (s <= 0.0) return node;
    return tape.scale(tape.tanh_(tape.scale(node, 1.0 / s)), s);
}

}  // namespace

RolloutGraph rollout(Tape& tape, const ParamSet& ps, const TapeBinding& bind,
                     const ProblemSpec& spec, const TimeGrid& grid, const NoiseBlock& noise) {
    const int S = noise.samples;
    const int N = grid.steps();
    const int d = spec.d;
    if (noise.dim != d) throw std::invalid_argument("rollout: noise dimension mismatch");
    if (ps.steps < N) throw std::invalid_argument("rollout: ParamSet has too few steps");
    if (ps.dim != d) throw std::invalid_argument("rollout: ParamSet dimension mismatch");
    if (!spec.driver_graph || !spec.terminal_graph)
        throw std::invalid_argument("rollout: problem lacks tape builders");
    if (spec.y_coupled_forward && !spec.drift_graph)
        throw std::invalid_argument(
            "rollout: Y-coupled forward dynamics need a drift tape builder");

    RolloutGraph out;
    out.paths.X.reserve(N + 1);
    out.paths.Y.reserve(N + 1);
    out.paths.Z.reserve(N);
    out.paths.Gamma.reserve(N);

    const int ones = tape.input(MatrixXd::Ones(S, 1));
    int Ynode = tape.matmul(ones, bind.y0);  // broadcast the scalar head
    int Xnode = tape.input(MatrixXd(spec.xi.transpose().replicate(S, 1)));

    out.paths.X.push_back(tape.val(Xnode));
    out.paths.Y.push_back(tape.val(Ynode).col(0));

    for (int n = 0; n < N; ++n) {
        const double t = grid.t(n);
        const double dt = grid.dt(n);
        // Copies: the tape's node storage may reallocate as ops are pushed.
        const MatrixXd Xn = tape.val(Xnode);
        const VectorXd Yn = tape.val(Ynode).col(0);

        const int in = tape.concat_cols(Xnode, Ynode);
        const int Znode = saturate(tape, z_net_forward(tape, ps, bind, n, in), ps.policy_clamp);

        const UNetFirstLayer first = u_net_first_layer(tape, ps, bind, n, in);
        const int Uq = saturate(tape, u_net_over_levels(tape, ps, bind, n, first, spec.measure.nodes()),
                                ps.policy_clamp);
        const int Gnode =
            tape.block_weighted_sum(Uq, spec.measure.gamma_weights(), spec.measure.quad_order());
        const int Ucomp =
            tape.block_weighted_sum(Uq, spec.measure.lambda_weights(), spec.measure.quad_order());

        const int fnode = spec.driver_graph(tape, t, Xnode, Ynode, Znode, Gnode);

        const int dWnode = tape.input(noise.dW[n]);
        int Ynext = tape.sub(Ynode, tape.scale(fnode, dt));
        Ynext = tape.add(Ynext, tape.row_dot(Znode, dWnode));
        auto [idx, marks] = mark_rows(noise.jumps[n], S);
        if (!idx.empty()) {
            std::vector<std::int32_t> scatter_idx = idx;
            const int Uj = saturate(
                tape, u_net_at_marks(tape, ps, bind, n, first, std::move(idx), std::move(marks)),
                ps.policy_clamp);
            Ynext = tape.add(Ynext, tape.scatter_sum_rows(Uj, std::move(scatter_idx), S));
        }
        Ynext = tape.sub(Ynext, tape.scale(Ucomp, dt));

        // Forward state: drift on-tape only when it couples through Y.
        const MatrixXd noise_inc = forward_noise_increment(spec, grid, noise, n, Xn, Yn);
        int Xnext;
        if (spec.drift_graph) {
            int Xinc = tape.input(noise_inc);
            Xnext = tape.add(Xnode, tape.add(tape.scale(spec.drift_graph(tape, t, Xnode, Ynode), dt),
                                             Xinc));
        } else {
            MatrixXd Xn1 = Xn + noise_inc;
            if (!spec.drift_zero) {
                for (int i = 0; i < S; ++i)
                    Xn1.row(i) += dt * spec.drift(t, Xn.row(i).transpose(), Yn(i)).transpose();
            }
            Xnext = tape.input(std::move(Xn1));
        }

        check_state(tape.val(Xnext), tape.val(Ynext).col(0), n + 1);

        out.paths.Z.push_back(tape.val(Znode));
        out.paths.Gamma.push_back(tape.val(Gnode).col(0));
        out.paths.X.push_back(tape.val(Xnext));
        out.paths.Y.push_back(tape.val(Ynext).col(0));
        Xnode = Xnext;
        Ynode = Ynext;
    }

    out.y_terminal = Ynode;
    out.g_terminal = spec.terminal_graph(tape, Xnode);
    out.loss = tape.mean_all(tape.square(tape.sub(out.y_terminal, out.g_terminal)));
    return out;
}

double terminal_loss(const ParamSet& ps, const ProblemSpec& spec, const TimeGrid& grid,
                     const NoiseBlock& noise) {
    Tape tape;
    const TapeBinding bind = bind_params(tape, ps);
    const RolloutGraph g = rollout(tape, ps, bind, spec, grid, noise);
    return tape.scalar(g.loss);
}

double gamma_of(const std::function<double(double)>& kernel, const JumpMeasureSpec& measure) {
    const auto& nodes = measure.nodes();
    const auto& gw = measure.gamma_weights();
    double acc = 0.0;
    for (std::size_t q = 0; q < nodes.size(); ++q) {
        const double v = kernel(nodes[q]);
        if (!std::isfinite(v)) throw std::runtime_error("gamma_of: kernel not finite");
        acc += gw[q] * v;
    }
    return acc;
}

OraclePolicies exact_policies(const ProblemSpec& spec) {
    if (!spec.exact_u || !spec.exact_grad)
        throw std::invalid_argument("exact_policies: problem has no closed-form solution");
    OraclePolicies pol;
    pol.y0 = spec.exact_u(0.0, spec.xi);
    pol.z = [&spec](double t, const VectorXd& x, double /*y*/) { return spec.exact_z(t, x); };
    pol.u_kernel = [&spec](double t, const VectorXd& x, double y, double e) {
        return spec.exact_u(t, x + spec.jump_coeff(t, x, y, e)) - spec.exact_u(t, x);
    };
    return pol;
}

PathBatch rollout_policies(const OraclePolicies& pol, const ProblemSpec& spec,
                           const TimeGrid& grid, const NoiseBlock& noise) {
    const int S = noise.samples;
    const int N = grid.steps();
    const int d = spec.d;
    if (noise.dim != d) throw std::invalid_argument("rollout_policies: noise dimension mismatch");

    PathBatch paths;
    paths.X.assign(N + 1, MatrixXd());
    paths.Y.assign(N + 1, VectorXd());
    paths.Z.assign(N, MatrixXd());
    paths.Gamma.assign(N, VectorXd());
    paths.X[0] = spec.xi.transpose().replicate(S, 1);
    paths.Y[0] = VectorXd::Constant(S, pol.y0);

    const auto& qnodes = spec.measure.nodes();
    const auto& lw = spec.measure.lambda_weights();
    const auto& gw = spec.measure.gamma_weights();

    for (int n = 0; n < N; ++n) {
        const double t = grid.t(n);
        const double dt = grid.dt(n);
        const MatrixXd& Xn = paths.X[n];
        const VectorXd& Yn = paths.Y[n];
        MatrixXd Zn(S, d);
        VectorXd Gn(S);
        VectorXd Ynext(S);

        for (int i = 0; i < S; ++i) {
            const VectorXd x = Xn.row(i).transpose();
            const double y = Yn(i);
            const VectorXd z = pol.z(t, x, y);
            Zn.row(i) = z.transpose();

            double gamma = 0.0, comp = 0.0;
            for (std::size_t q = 0; q < qnodes.size(); ++q) {
                const double u = pol.u_kernel(t, x, y, qnodes[q]);
                gamma += gw[q] * u;
                comp += lw[q] * u;
            }
            Gn(i) = gamma;

            double jump_sum = 0.0;
            const auto& step = noise.jumps[n];
            for (int k = step.offsets[i]; k < step.offsets[i + 1]; ++k)
                jump_sum += pol.u_kernel(t, x, y, step.marks[k]);

            const double f = spec.driver(t, x, y, z, gamma);
            Ynext(i) = y - f * dt + z.dot(noise.dW[n].row(i)) + jump_sum - dt * comp;
        }

        const MatrixXd inc = forward_noise_increment(spec, grid, noise, n, Xn, Yn);
        MatrixXd Xnext = Xn + inc;
        if (!spec.drift_zero)
            for (int i = 0; i < S; ++i)
                Xnext.row(i) += dt * spec.drift(t, Xn.row(i).transpose(), Yn(i)).transpose();

        check_state(Xnext, Ynext, n + 1);
        paths.Z[n] = std::move(Zn);
        paths.Gamma[n] = std::move(Gn);
        paths.X[n + 1] = std::move(Xnext);
        paths.Y[n + 1] = std::move(Ynext);
    }
    return paths;
}

double terminal_loss_policies(const OraclePolicies& pol, const ProblemSpec& spec,
                              const TimeGrid& grid, const NoiseBlock& noise) {
    const PathBatch paths = rollout_policies(pol, spec, grid, noise);
    const int S = noise.samples;
    double acc = 0.0;
    for (int i = 0; i < S; ++i) {
        const double diff = paths.Y.back()(i) - spec.terminal(paths.X.back().row(i).transpose());
        acc += diff * diff;
    }
    return acc / S;
}

}  // namespace fbsde
