#include "fbsde/problem.hpp"

#include <cmath>
#include <stdexcept>

namespace fbsde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::VectorXd ProblemSpec::exact_z(double t, const Eigen::VectorXd& x) const {
    if (!exact_grad) throw std::runtime_error("exact_z: problem has no exact gradient");
    return diffusion(t, x, exact_u(t, x)).transpose() * exact_grad(t, x);
}

double ProblemSpec::exact_gamma(double t, const Eigen::VectorXd& x) const {
    if (!exact_u) throw std::runtime_error("exact_gamma: problem has no exact solution");
    const double y = exact_u(t, x);
    const auto& nodes = measure.nodes();
    const auto& gw = measure.gamma_weights();
    double acc = 0.0;
    for (std::size_t q = 0; q < nodes.size(); ++q)
        acc += gw[q] * (exact_u(t, x + jump_coeff(t, x, y, nodes[q])) - y);
    return acc;
}

void ProblemSpec::validate() const {
    if (d < 1) throw std::invalid_argument("ProblemSpec: d must be >= 1");
    if (!(terminal_time > 0.0)) throw std::invalid_argument("ProblemSpec: T must be positive");
    if (xi.size() != d) throw std::invalid_argument("ProblemSpec: xi dimension mismatch");
    if (!drift || !diffusion || !jump_coeff || !driver || !terminal)
        throw std::invalid_argument("ProblemSpec: missing coefficient");
    if (exact_u) {
        // terminal consistency u(T,x) = g(x) on a few probe points
        for (int k = 0; k < 8; ++k) {
            VectorXd x = VectorXd::Constant(d, -2.0 + 0.5 * k);
            if (std::abs(exact_u(terminal_time, x) - terminal(x)) > 1e-10)
                throw std::invalid_argument("ProblemSpec: exact_u(T,.) != terminal g");
        }
    }
}

namespace {

// Driver common to both benchmarks, written in s = xbar + t:
//   f = (y-2) e^y / (2 e^{sin(s)+2}) - y * zeta / (sin(s)+2) - gamma
// where zeta recovers the derivative of u in xbar from z = sigma^T grad u;
// for sigma = I/sqrt(d) that is sum(z)/sqrt(d) (and plain z in d = 1).
double benchmark_driver(double t, double xbar, double y, double zeta, double gamma) {
    const double s = std::sin(xbar + t);
    return (y - 2.0) * std::exp(y) / (2.0 * std::exp(s + 2.0)) - y * zeta / (s + 2.0) - gamma;
}

int benchmark_driver_graph(Tape& tape, double t, int Xbar, int Y, int Zeta, int Gamma) {
    const int s = tape.sin_(tape.add_scalar(Xbar, t));
    const int num = tape.mul(tape.add_scalar(Y, -2.0), tape.exp_(Y));
    const int den = tape.scale(tape.exp_(tape.add_scalar(s, 2.0)), 2.0);
    const int first = tape.div(num, den);
    const int second = tape.div(tape.mul(Y, Zeta), tape.add_scalar(s, 2.0));
    return tape.sub(tape.sub(first, second), Gamma);
}

}  // namespace

ProblemSpec example_1d(double terminal_time, int quad_order) {
    ProblemSpec p;
    p.name = "example1";
    p.d = 1;
    p.terminal_time = terminal_time;
    p.xi = VectorXd::Zero(1);
    p.measure = JumpMeasureSpec::uniform(1.0, quad_order);

    p.drift = [](double, const VectorXd&, double) { return VectorXd::Zero(1); };
    p.diffusion = [](double, const VectorXd&, double) { return MatrixXd::Identity(1, 1); };
    p.jump_coeff = [](double, const VectorXd&, double, double e) {
        return VectorXd::Constant(1, e);
    };
    p.driver = [](double t, const VectorXd& x, double y, const VectorXd& z, double gamma) {
        return benchmark_driver(t, x(0), y, z(0), gamma);
    };
    const double T = terminal_time;
    p.terminal = [T](const VectorXd& x) { return std::sin(x(0) + T) + 2.0; };
    p.exact_u = [](double t, const VectorXd& x) { return std::sin(x(0) + t) + 2.0; };
    p.exact_grad = [](double t, const VectorXd& x) {
        return VectorXd::Constant(1, std::cos(x(0) + t));
    };

    p.drift_zero = true;
    p.sigma_scalar_diag = true;
    p.sigma_scale = 1.0;
    p.beta_linear = true;
    p.beta_dir = VectorXd::Ones(1);
    p.y_coupled_forward = false;

    p.driver_graph = [](Tape& tape, double t, int X, int Y, int Z, int Gamma) {
        return benchmark_driver_graph(tape, t, tape.row_sum(X), Y, tape.row_sum(Z), Gamma);
    };
    p.terminal_graph = [T](Tape& tape, int X) {
        return tape.add_scalar(tape.sin_(tape.add_scalar(tape.row_sum(X), T)), 2.0);
    };
    p.validate();
    return p;
}

ProblemSpec example_highdim(int d, double terminal_time, MarkMode mode, int quad_order) {
    if (d < 1) throw std::invalid_argument("example_highdim: d must be >= 1");
    ProblemSpec p;
    p.name = "example_highdim";
    p.d = d;
    p.terminal_time = terminal_time;
    p.xi = VectorXd::Zero(d);
    p.measure = JumpMeasureSpec::uniform(1.0, quad_order);

    const double sig = 1.0 / std::sqrt(static_cast<double>(d));
    const double sqd = std::sqrt(static_cast<double>(d));
    p.drift = [d](double, const VectorXd&, double) { return VectorXd::Zero(d); };
    p.diffusion = [d, sig](double, const VectorXd&, double) {
        return MatrixXd(sig * MatrixXd::Identity(d, d));
    };
    // Mark action: aggregate_shift moves xbar by e (solution-consistent);
    // per_coordinate moves every coordinate by e (the literal reading).
    const VectorXd dir = (mode == MarkMode::aggregate_shift)
                             ? VectorXd::Constant(d, 1.0 / static_cast<double>(d))
                             : VectorXd::Ones(d);
    p.jump_coeff = [dir](double, const VectorXd&, double, double e) {
        return VectorXd(e * dir);
    };
    p.driver = [sqd](double t, const VectorXd& x, double y, const VectorXd& z, double gamma) {
        return benchmark_driver(t, x.sum(), y, z.sum() / sqd, gamma);
    };
    const double T = terminal_time;
    p.terminal = [T](const VectorXd& x) { return std::sin(x.sum() + T) + 2.0; };
    p.exact_u = [](double t, const VectorXd& x) { return std::sin(x.sum() + t) + 2.0; };
    p.exact_grad = [d](double t, const VectorXd& x) {
        return VectorXd(VectorXd::Constant(d, std::cos(x.sum() + t)));
    };

    p.drift_zero = true;
    p.sigma_scalar_diag = true;
    p.sigma_scale = sig;
    p.beta_linear = true;
    p.beta_dir = dir;
    p.y_coupled_forward = false;

    p.driver_graph = [sqd](Tape& tape, double t, int X, int Y, int Z, int Gamma) {
        const int zeta = tape.scale(tape.row_sum(Z), 1.0 / sqd);
        return benchmark_driver_graph(tape, t, tape.row_sum(X), Y, zeta, Gamma);
    };
    p.terminal_graph = [T](Tape& tape, int X) {
        return tape.add_scalar(tape.sin_(tape.add_scalar(tape.row_sum(X), T)), 2.0);
    };
    p.validate();
    return p;
}

ProblemSpec example_1d_coupled(double coupling, double terminal_time, int quad_order) {
    ProblemSpec p = example_1d(terminal_time, quad_order);
    p.name = "example1_coupled";
    p.drift = [coupling](double, const VectorXd&, double y) {
        return VectorXd::Constant(1, coupling * y);
    };
    p.drift_zero = false;
    p.y_coupled_forward = true;
    p.exact_u = nullptr;
    p.exact_grad = nullptr;
    p.drift_graph = [coupling](Tape& tape, double, int /*X*/, int Y) {
        return tape.scale(Y, coupling);
    };
    return p;
}

double pide_residual(const ProblemSpec& spec, double t, const Eigen::VectorXd& x,
                     const std::function<double(double, const Eigen::VectorXd&)>& u,
                     double fd_step) {
    const int d = spec.d;
    const double h = fd_step;
    const double uval = u(t, x);

    const double du_dt = (u(t + h, x) - u(t - h, x)) / (2.0 * h);

    VectorXd grad(d);
    for (int i = 0; i < d; ++i) {
        VectorXd xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        grad(i) = (u(t, xp) - u(t, xm)) / (2.0 * h);
    }

    const MatrixXd sig = spec.diffusion(t, x, uval);
    const MatrixXd a = sig * sig.transpose();

    // Trace term; the full Hessian is only assembled when sigma*sigma^T has
    // off-diagonal entries.
    double trace_term = 0.0;
    bool diag_only = true;
    for (int i = 0; i < d && diag_only; ++i)
        for (int j = 0; j < d; ++j)
            if (i != j && std::abs(a(i, j)) > 0.0) {
                diag_only = false;
                break;
            }
    for (int i = 0; i < d; ++i) {
        VectorXd xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        const double dii = (u(t, xp) - 2.0 * uval + u(t, xm)) / (h * h);
        trace_term += a(i, i) * dii;
    }
    if (!diag_only) {
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) {
                if (std::abs(a(i, j)) == 0.0) continue;
                VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
                xpp(i) += h;
                xpp(j) += h;
                xpm(i) += h;
                xpm(j) -= h;
                xmp(i) -= h;
                xmp(j) += h;
                xmm(i) -= h;
                xmm(j) -= h;
                const double dij =
                    (u(t, xpp) - u(t, xpm) - u(t, xmp) + u(t, xmm)) / (4.0 * h * h);
                trace_term += 2.0 * a(i, j) * dij;
            }
    }

    const VectorXd b = spec.drift(t, x, uval);

    // Nonlocal terms: integral (u(x+beta)-u-<grad,beta>) lambda(de) inside L
    // and the gamma-weighted B[u] entering the driver.
    double nonlocal = 0.0;
    double bu = 0.0;
    {
        const auto& nodes = spec.measure.nodes();
        const auto& lw = spec.measure.lambda_weights();
        const auto& gw = spec.measure.gamma_weights();
        for (std::size_t q = 0; q < nodes.size(); ++q) {
            const VectorXd beta = spec.jump_coeff(t, x, uval, nodes[q]);
            const double shift = u(t, x + beta) - uval;
            nonlocal += lw[q] * (shift - grad.dot(beta));
            bu += gw[q] * shift;
        }
    }

    const VectorXd z = sig.transpose() * grad;
    const double res =
        du_dt + 0.5 * trace_term + b.dot(grad) + nonlocal + spec.driver(t, x, uval, z, bu);
    if (!std::isfinite(res)) throw std::runtime_error("pide_residual: non-finite value");
    return res;
}

}  // namespace fbsde
