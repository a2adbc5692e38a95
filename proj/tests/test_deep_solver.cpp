#include <doctest.h>

#include <cmath>

#include "fbsde/rollout.hpp"
#include "test_support.hpp"

using namespace fbsde;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// b = 0, sigma = I, beta = 0, f = 0, g = 0: Y moves only through Z dW.
ProblemSpec brownian_problem(int d) {
    ProblemSpec p = fbsde::testing::zero_problem(0.0);
    p.name = "brownian";
    p.d = d;
    p.xi = VectorXd::Zero(d);
    p.sigma_scale = 1.0;
    p.diffusion = [d](double, const VectorXd&, double) {
        return MatrixXd(MatrixXd::Identity(d, d));
    };
    p.drift = [d](double, const VectorXd&, double) { return VectorXd::Zero(d); };
    p.jump_coeff = [d](double, const VectorXd&, double, double) { return VectorXd::Zero(d); };
    p.beta_dir = VectorXd::Zero(d);
    p.exact_grad = [d](double, const VectorXd&) { return VectorXd::Zero(d); };
    p.validate();
    return p;
}

}  // namespace

TEST_CASE("gamma_of quadrature") {
    const JumpMeasureSpec m = JumpMeasureSpec::uniform(1.0);

    SUBCASE("zero kernel integrates to zero") {
        CHECK(gamma_of([](double) { return 0.0; }, m) == 0.0);
    }
    SUBCASE("benchmark kernel: 2(sin1 - 1) sin(x+t)") {
        for (double s : {0.15, 1.0, 2.6}) {  // s = x + t
            const double got = gamma_of([s](double e) { return std::sin(s + e) - std::sin(s); }, m);
            const double want = 2.0 * (std::sin(1.0) - 1.0) * std::sin(s);
            CHECK(std::abs(got - want) < 1e-8);

            // Independent cross-check: 1e6-point Riemann sum.
            const int M = 1000000;
            double riemann = 0.0;
            for (int i = 0; i < M; ++i) {
                const double e = -1.0 + 2.0 * (i + 0.5) / M;
                riemann += std::sin(s + e) - std::sin(s);
            }
            riemann *= 2.0 / M;
            CHECK(std::abs(got - riemann) < 1e-6);
        }
    }
    SUBCASE("gamma == 0 kills the integral regardless of kernel") {
        const JumpMeasureSpec m0(1.0, [](double) { return 0.5; }, 2.0, [](double) { return 0.0; },
                                 0.0);
        CHECK(gamma_of([](double e) { return std::exp(e); }, m0) == 0.0);
    }
}

TEST_CASE("rollout under frozen dynamics keeps X and Y constant") {
    const ProblemSpec spec = fbsde::testing::zero_problem(0.0);
    NetConfig cfg;
    ParamSet ps = init_params(cfg, 1, 4, 3);
    std::fill(ps.flat.begin(), ps.flat.end(), 0.0);
    ps.y0() = 1.37;

    const TimeGrid grid = TimeGrid::uniform(4, 1.0);
    const NoiseBlock noise = make_noise(grid, 1, 64, spec.measure, 17);
    Tape tape;
    const TapeBinding bind = bind_params(tape, ps);
    const RolloutGraph g = rollout(tape, ps, bind, spec, grid, noise);

    for (int i = 0; i < 64; ++i) {
        CHECK(g.paths.Y.back()(i) == doctest::Approx(1.37));
        CHECK(g.paths.X.back()(i, 0) == 0.0);
        CHECK(g.paths.Y.front()(i) == doctest::Approx(1.37));
    }
    CHECK(tape.scalar(g.loss) == doctest::Approx(1.37 * 1.37));
}

TEST_CASE("constant Z policy telescopes to a dot product with W_T") {
    const int d = 3, N = 6, S = 32;
    const ProblemSpec spec = brownian_problem(d);
    VectorXd a(d);
    a << 0.8, -1.2, 0.5;
    const ParamSet ps = fbsde::testing::constant_z_params(d, N, a, 0.9);

    const TimeGrid grid = TimeGrid::uniform(N, 1.0);
    const NoiseBlock noise = make_noise(grid, d, S, spec.measure, 5);
    Tape tape;
    const TapeBinding bind = bind_params(tape, ps);
    const RolloutGraph g = rollout(tape, ps, bind, spec, grid, noise);

    for (int i = 0; i < S; ++i) {
        VectorXd wT = VectorXd::Zero(d);
        for (int n = 0; n < N; ++n) wT += noise.dW[n].row(i).transpose();
        CHECK(g.paths.Y.back()(i) - 0.9 == doctest::Approx(a.dot(wT)).epsilon(1e-12));
        // X is a plain Brownian path here.
        CHECK((g.paths.X.back().row(i).transpose() - wT).norm() < 1e-12);
    }
}

TEST_CASE("martingale sanity: zero driver leaves E[Y_N] at y0") {
    ProblemSpec spec = example_1d();
    spec.driver = [](double, const VectorXd&, double, const VectorXd&, double) { return 0.0; };
    spec.driver_graph = [](Tape& tape, double, int, int Y, int, int) {
        return tape.scale(Y, 0.0);
    };

    NetConfig cfg;
    const ParamSet ps = init_params(cfg, 1, 10, 21, 0.6);
    const TimeGrid grid = TimeGrid::uniform(10, 1.0);
    const NoiseBlock noise = make_noise(grid, 1, 20000, spec.measure, 99);
    Tape tape;
    const TapeBinding bind = bind_params(tape, ps);
    const RolloutGraph g = rollout(tape, ps, bind, spec, grid, noise);

    const VectorXd& yT = g.paths.Y.back();
    const double mean = yT.mean();
    const double var = (yT.array() - mean).square().sum() / (yT.size() - 1);
    const double se = std::sqrt(var / yT.size());
    CHECK(std::abs(mean - 0.6) < 4.0 * se + 1e-12);
}

TEST_CASE("compensated jumps are mean zero in the forward state") {
    ProblemSpec spec = fbsde::testing::zero_problem(0.0);
    spec.jump_coeff = [](double, const VectorXd&, double, double e) {
        return VectorXd::Constant(1, e);
    };
    spec.beta_dir = VectorXd::Ones(1);
    spec.measure = JumpMeasureSpec::uniform(1.0);

    NetConfig cfg;
    ParamSet ps = init_params(cfg, 1, 8, 1);
    std::fill(ps.flat.begin(), ps.flat.end(), 0.0);
    const TimeGrid grid = TimeGrid::uniform(8, 1.0);
    const NoiseBlock noise = make_noise(grid, 1, 50000, spec.measure, 1234);
    Tape tape;
    const TapeBinding bind = bind_params(tape, ps);
    const RolloutGraph g = rollout(tape, ps, bind, spec, grid, noise);

    const double mean = g.paths.X.back().col(0).mean();
    // Var[X_T] = T * integral e^2 lambda(de) = 2/3.
    const double se = std::sqrt((2.0 / 3.0) / noise.samples);
    CHECK(std::abs(mean) < 4.0 * se);
}

TEST_CASE("gradient reaches every parameter block that feeds the loss") {
    const ProblemSpec spec = example_1d();
    NetConfig cfg;
    const ParamSet ps = init_params(cfg, 1, 5, 777, 1.0);
    const TimeGrid grid = TimeGrid::uniform(5, 1.0);
    const NoiseBlock noise = make_noise(grid, 1, 128, spec.measure, 31);

    Tape tape;
    const TapeBinding bind = bind_params(tape, ps);
    const RolloutGraph g = rollout(tape, ps, bind, spec, grid, noise);
    tape.backward(g.loss);
    const auto grad = collect_grad(tape, bind, ps);

    CHECK(std::abs(grad[0]) > 0.0);  // y0 head
    for (int n = 0; n < 5; ++n) {
        double znorm = 0.0, unorm = 0.0;
        for (auto k = ps.net_offset(false, n); k < ps.net_offset(false, n) + ps.z_shape.param_count(); ++k)
            znorm += grad[k] * grad[k];
        for (auto k = ps.net_offset(true, n); k < ps.net_offset(true, n) + ps.u_shape.param_count(); ++k)
            unorm += grad[k] * grad[k];
        CHECK(znorm > 0.0);
        CHECK(unorm > 0.0);
    }
}

TEST_CASE("oracle-policy terminal loss shrinks as the grid refines") {
    const ProblemSpec spec = example_1d();
    const OraclePolicies pol = exact_policies(spec);
    CHECK(pol.y0 == doctest::Approx(2.0));

    double losses[3];
    const int Ns[3] = {20, 40, 80};
    for (int k = 0; k < 3; ++k) {
        const TimeGrid grid = TimeGrid::uniform(Ns[k], spec.terminal_time);
        const NoiseBlock noise = make_noise(grid, 1, 20000, spec.measure, 4000 + k);
        losses[k] = terminal_loss_policies(pol, spec, grid, noise);
    }
    CHECK(losses[0] > losses[1]);
    CHECK(losses[1] > losses[2]);
    CHECK(losses[0] / losses[2] > 2.5);  // squared error should scale roughly like h
}

TEST_CASE("divergence is reported with its step index") {
    ProblemSpec spec = fbsde::testing::zero_problem(0.0);
    // Explosive driver: Y escapes to +inf within a few steps.
    spec.driver = [](double, const VectorXd&, double y, const VectorXd&, double) {
        return -std::exp(40.0 * y + 40.0);
    };
    spec.driver_graph = [](Tape& tape, double, int, int Y, int, int) {
        return tape.scale(tape.exp_(tape.add_scalar(tape.scale(Y, 40.0), 40.0)), -1.0);
    };
    NetConfig cfg;
    ParamSet ps = init_params(cfg, 1, 6, 3);
    std::fill(ps.flat.begin(), ps.flat.end(), 0.0);
    const TimeGrid grid = TimeGrid::uniform(6, 1.0);
    const NoiseBlock noise = make_noise(grid, 1, 8, spec.measure, 77);
    Tape tape;
    const TapeBinding bind = bind_params(tape, ps);
    try {
        rollout(tape, ps, bind, spec, grid, noise);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.step >= 1);
        CHECK(e.step <= 6);
    }
}

TEST_CASE("terminal loss is zero when the terminal identity holds by construction") {
    const double c = 2.5;
    const ProblemSpec spec = fbsde::testing::zero_problem(c);
    NetConfig cfg;
    ParamSet ps = init_params(cfg, 1, 3, 9);
    std::fill(ps.flat.begin(), ps.flat.end(), 0.0);
    ps.y0() = c;
    const TimeGrid grid = TimeGrid::uniform(3, 1.0);
    const NoiseBlock noise = make_noise(grid, 1, 16, spec.measure, 5);
    CHECK(terminal_loss(ps, spec, grid, noise) == 0.0);
}
