#include <doctest.h>

#include <cmath>

#include "fbsde/markovian.hpp"
#include "fbsde/noise.hpp"
#include "fbsde/quad_oracle.hpp"
#include "fbsde/regression.hpp"
#include "fbsde/rng.hpp"

using namespace fbsde;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

RegressionBasis default_basis() {
    RegressionBasis b;
    b.kind = RegressionBasis::Kind::polynomial;
    b.degree = 4;
    b.lo = -4.0;
    b.hi = 4.0;
    return b;
}

}  // namespace

TEST_CASE("condexp_regress") {
    const RegressionBasis basis = default_basis();

    SUBCASE("recovers x^2 from noisy observations") {
        const int S = 100000;
        CounterRng rng(1, 1);
        VectorXd x(S), y(S);
        for (int i = 0; i < S; ++i) {
            x(i) = 1.5 * rng.normal();
            y(i) = x(i) * x(i) + 0.3 * rng.normal();
        }
        RegressionBasis wide = basis;
        wide.lo = -6.0;
        wide.hi = 6.0;
        const RegressionFit fit = condexp_regress(x, y, wide);
        // statistical tolerance ~ 3 sigma of the pointwise regression error
        for (double xx : {-2.0, -0.5, 0.0, 1.0, 2.5})
            CHECK(std::abs(fit(xx) - xx * xx) < 0.05);
    }
    SUBCASE("constant target is reproduced through the intercept") {
        const int S = 200;
        VectorXd x(S), y(S);
        CounterRng rng(2, 1);
        for (int i = 0; i < S; ++i) {
            x(i) = rng.normal();
            y(i) = 3.7;
        }
        const RegressionFit fit = condexp_regress(x, y, basis);
        CHECK(fit(0.3) == doctest::Approx(3.7).epsilon(1e-6));
        CHECK(fit(-2.0) == doctest::Approx(3.7).epsilon(1e-6));
    }
    SUBCASE("linear target is exact in the span") {
        const int S = 500;
        VectorXd x(S), y(S);
        CounterRng rng(3, 1);
        for (int i = 0; i < S; ++i) {
            x(i) = 3.5 * (2.0 * rng.uniform() - 1.0);  // inside the clip range
            y(i) = -1.3 * x(i);
        }
        const RegressionFit fit = condexp_regress(x, y, basis);
        CHECK((fit(1.0) - fit(0.0)) == doctest::Approx(-1.3).epsilon(1e-8));
    }
    SUBCASE("requires 10x more samples than basis functions") {
        VectorXd x = VectorXd::Random(30), y = VectorXd::Random(30);
        CHECK_THROWS_AS(condexp_regress(x, y, basis), std::invalid_argument);
    }
}

TEST_CASE("degenerate regressor collapses to the sample mean") {
    RegressionBasis basis = default_basis();
    const int S = 100;
    VectorXd x = VectorXd::Zero(S), y(S);
    CounterRng rng(21, 9);
    for (int i = 0; i < S; ++i) y(i) = 2.0 + 0.1 * rng.normal();
    const RegressionFit fit = condexp_regress(x, y, basis);
    CHECK(fit(0.0) == doctest::Approx(y.mean()));
    CHECK(fit(1.0) == doctest::Approx(y.mean()));  // constant everywhere
    CHECK(fit.condition == 1.0);
}

TEST_CASE("project_z") {
    const RegressionBasis basis = default_basis();
    const int S = 100000;
    const double dt = 0.05;
    CounterRng rng(4, 2);
    VectorXd x(S), y(S);
    MatrixXd dW(S, 1);
    for (int i = 0; i < S; ++i) {
        x(i) = rng.normal();
        dW(i, 0) = std::sqrt(dt) * rng.normal();
    }

    SUBCASE("planted constant Z is recovered") {
        const double a = 1.7;
        for (int i = 0; i < S; ++i) y(i) = a * dW(i, 0) + 0.4;
        const auto fits = project_z(x, y, dW, dt, basis);
        REQUIRE(fits.size() == 1);
        // E[dW^2] = dt cancels; sampling error ~ 3 sigma
        for (double xx : {-1.0, 0.0, 1.5}) CHECK(std::abs(fits[0](xx) - a) < 0.05);
    }
    SUBCASE("independent target projects to zero") {
        CounterRng rng2(5, 2);
        for (int i = 0; i < S; ++i) y(i) = 2.0 + rng2.normal();
        const auto fits = project_z(x, y, dW, dt, basis);
        for (double xx : {-1.0, 0.0, 1.5}) CHECK(std::abs(fits[0](xx)) < 0.15);
    }
    SUBCASE("jump-only martingale increments project to zero") {
        const JumpMeasureSpec m = JumpMeasureSpec::uniform(1.0);
        CounterRng rng3(6, 2);
        for (int i = 0; i < S; ++i) {
            const int k = rng3.poisson(m.total_intensity() * dt);
            double s = 0.0;
            for (int j = 0; j < k; ++j) s += m.sample_mark(rng3.uniform());
            y(i) = s;  // independent of dW
        }
        const auto fits = project_z(x, y, dW, dt, basis);
        for (double xx : {-1.0, 0.0, 1.5}) CHECK(std::abs(fits[0](xx)) < 0.15);
    }
}

TEST_CASE("project_gamma") {
    const RegressionBasis basis = default_basis();
    const JumpMeasureSpec m = JumpMeasureSpec::uniform(1.0);
    const int S = 100000;
    const double dt = 0.05;
    CounterRng rng(7, 3);
    VectorXd x(S), y(S), mg(S);
    const double comp = levy_integral([&](double e) { return m.gamma(e); }, m);  // = 2
    for (int i = 0; i < S; ++i) {
        x(i) = rng.normal();
        const int k = rng.poisson(m.total_intensity() * dt);
        mg(i) = k - dt * comp;  // gamma == 1
    }

    SUBCASE("isometry: projecting M_gamma itself gives integral gamma^2 lambda(de) = 2") {
        const RegressionFit fit = project_gamma(x, mg, mg, dt, basis);
        for (double xx : {-1.0, 0.0, 1.5}) CHECK(std::abs(fit(xx) - 2.0) < 0.2);
    }
    SUBCASE("independent target projects to zero") {
        CounterRng rng2(8, 3);
        for (int i = 0; i < S; ++i) y(i) = 1.0 + rng2.normal();
        const RegressionFit fit = project_gamma(x, y, mg, dt, basis);
        for (double xx : {-1.0, 0.0, 1.5}) CHECK(std::abs(fit(xx)) < 0.5);
    }
    SUBCASE("gamma == 0 gives exactly zero") {
        const RegressionFit fit = project_gamma(x, y, VectorXd::Zero(S), dt, basis);
        for (double xx : {-1.0, 0.0, 1.5}) CHECK(fit(xx) == 0.0);
    }
}

TEST_CASE("markovian iteration") {
    MarkovianConfig cfg;
    cfg.samples = 20000;
    cfg.basis = default_basis();
    cfg.seed = 99;

    SUBCASE("decoupled problem: one sweep is a fixed point under the same noise") {
        const ProblemSpec spec = example_1d();
        const TimeGrid grid = TimeGrid::uniform(10, 1.0);
        MarkovianState s0;
        s0.steps = 10;
        const MarkovianState s1 = markovian_sweep(s0, spec, grid, cfg);
        const MarkovianState s2 = markovian_sweep(s1, spec, grid, cfg);
        // Forward law does not depend on u, so the regressions coincide.
        for (int n = 0; n < 10; ++n)
            CHECK((s2.u[n].coef - s1.u[n].coef).norm() < 1e-12);
        CHECK(s2.history.back().sup_delta < 1e-12);
    }
    SUBCASE("example_1d: value at the initial point converges to 2") {
        const ProblemSpec spec = example_1d();
        const TimeGrid grid = TimeGrid::uniform(20, 1.0);
        const MarkovianState state = markovian_solve(spec, grid, cfg);
        CHECK(std::abs(state.history.back().u_at_xi - 2.0) < 0.05);
    }
    SUBCASE("weak coupling contracts: sup-deltas decrease over sweeps") {
        const ProblemSpec spec = example_1d_coupled(0.05);
        const TimeGrid grid = TimeGrid::uniform(10, 1.0);
        MarkovianConfig ccfg = cfg;
        ccfg.max_sweeps = 5;
        ccfg.tol = 0.0;  // force all sweeps
        const MarkovianState state = markovian_solve(spec, grid, ccfg);
        REQUIRE(state.history.size() == 5);
        for (std::size_t m = 1; m < state.history.size(); ++m) {
            CHECK(state.history[m].sup_delta < state.history[m - 1].sup_delta);
            if (m >= 1) CHECK(state.history[m].sup_delta / state.history[m - 1].sup_delta < 1.0);
        }
    }
}

TEST_CASE("condexp_quadrature_1d") {
    const ProblemSpec spec = example_1d();

    SUBCASE("martingale: identity function maps to x") {
        for (double x : {-1.0, 0.0, 0.8})
            CHECK(condexp_quadrature_1d(spec, [](double v) { return v; }, 0.2, x, 0.05) ==
                  doctest::Approx(x).epsilon(1e-9));
    }
    SUBCASE("second moment: x^2 picks up dt * (sigma^2 + integral e^2 lambda(de))") {
        const double dt = 0.05;
        const double want_var = dt * (1.0 + 2.0 / 3.0);
        for (double x : {-0.5, 0.0, 1.2}) {
            const double got =
                condexp_quadrature_1d(spec, [](double v) { return v * v; }, 0.0, x, dt);
            CHECK(got == doctest::Approx(x * x + want_var).epsilon(1e-8));
        }
        // Monte Carlo cross-check of the same expectation, 1e7 samples.
        CounterRng rng(11, 4);
        const double x0 = 0.7;
        double acc = 0.0;
        const int M = 10000000;
        for (int i = 0; i < M; ++i) {
            double v = x0 + std::sqrt(dt) * rng.normal();
            const int k = rng.poisson(2.0 * dt);
            for (int j = 0; j < k; ++j) v += spec.measure.sample_mark(rng.uniform());
            acc += v * v;
        }
        acc /= M;
        const double got =
            condexp_quadrature_1d(spec, [](double v) { return v * v; }, 0.0, x0, dt);
        CHECK(std::abs(got - acc) < 4.0 * 1e-3);  // MC noise ~ sqrt(Var/1e7)
    }
    SUBCASE("degenerate step returns the function value") {
        auto f = [](double v) { return std::sin(v) + 2.0; };
        CHECK(condexp_quadrature_1d(spec, f, 0.3, 0.4, 0.0) == f(0.4));
        CHECK(condexp_quadrature_1d(spec, f, 0.3, 0.4, 1e-15) == f(0.4));
    }
    SUBCASE("tower property over two half steps, 1e-8") {
        auto phi = [](double v) { return std::sin(v) + 0.1 * v * v; };
        const double dt = 0.05;
        for (double x : {-0.7, 0.0, 1.1}) {
            const double one_shot = condexp_quadrature_1d(spec, phi, 0.0, x, 2.0 * dt);
            auto inner = [&](double v) { return condexp_quadrature_1d(spec, phi, dt, v, dt); };
            const double composed = condexp_quadrature_1d(spec, inner, 0.0, x, dt);
            CHECK(std::abs(one_shot - composed) < 1e-8);
        }
    }
    SUBCASE("rejects mark-nonlinear jump coefficients") {
        ProblemSpec bad = example_1d();
        bad.jump_coeff = [](double, const VectorXd&, double, double e) {
            return VectorXd::Constant(1, e * e);
        };
        CHECK_THROWS_AS(condexp_quadrature_1d(bad, [](double v) { return v; }, 0.0, 0.0, 0.05),
                        std::invalid_argument);
    }
}

TEST_CASE("increment kernel moments") {
    const JumpMeasureSpec m = JumpMeasureSpec::uniform(1.0);
    const auto kernel = IncrementKernel::cached(m, 1.0, 1.0, 0.05);
    CHECK(kernel->expect([](double) { return 1.0; }, 0.0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(kernel->expect([](double v) { return v; }, 0.0)) < 1e-9);
    // E[f(W) dW]/dt with f = id equals sigma.
    CHECK(kernel->expect_zw([](double v) { return v; }, 0.0) ==
          doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(kernel->expect_zw([](double) { return 1.0; }, 0.0)) < 1e-9);
    CHECK(std::abs(kernel->expect_gw([](double) { return 1.0; }, 0.0)) < 1e-9);
}

TEST_CASE("quadrature backward solve approaches the exact solution at rate h") {
    const ProblemSpec spec = example_1d();
    double prev_err = 0.0;
    for (int N : {10, 20, 40}) {
        const TimeGrid grid = TimeGrid::uniform(N, 1.0);
        const QuadratureSolution sol = quadrature_backward_solve(spec, grid, -8.0, 8.0, 481);
        double err = 0.0;
        for (double x : {-1.5, -0.5, 0.0, 0.5, 1.5})
            err = std::max(err,
                           std::abs(sol.u[0](x) - spec.exact_u(0.0, VectorXd::Constant(1, x))));
        // |u-hat - u| = O(h): generous absolute cap plus observed halving
        CHECK(err < 1.6 / N);
        if (prev_err > 0.0) CHECK(err < 0.75 * prev_err);
        prev_err = err;
        if (N == 20) {
            for (double x : {-1.0, 0.0, 1.0}) {
                CHECK(std::abs(sol.z[10](x) - std::cos(x + grid.t(10))) < 0.15);
                CHECK(std::abs(sol.gamma[10](x) -
                               2.0 * (std::sin(1.0) - 1.0) * std::sin(x + grid.t(10))) < 0.15);
            }
        }
    }
}

TEST_CASE("regression estimate agrees with the quadrature oracle") {
    const ProblemSpec spec = example_1d();
    const double dt = 0.05;
    const int S = 20000;
    const NoiseBlock noise = make_noise(TimeGrid({0.0, dt}), 1, S, spec.measure, 2024);
    CounterRng rng(12, 5);
    VectorXd x0(S), y1(S);
    auto value = [](double v) { return std::sin(v) + 2.0; };
    for (int i = 0; i < S; ++i) {
        x0(i) = 1.2 * rng.normal();
        double x1 = x0(i) + noise.dW[0](i, 0);
        const auto& st = noise.jumps[0];
        for (int k = st.offsets[i]; k < st.offsets[i + 1]; ++k) x1 += st.marks[k];
        y1(i) = value(x1);
    }
    RegressionBasis basis;
    basis.degree = 8;  // basis bias well under the bootstrap noise
    basis.lo = -4.0;
    basis.hi = 4.0;
    const RegressionFit fit = condexp_regress(x0, y1, basis);

    // Analytic pin of the oracle: E[sin(x+W)] = exp(-(1/2 + 2(1-sin1)) dt) sin(x).
    const double damp = std::exp(-(0.5 + 2.0 * (1.0 - std::sin(1.0))) * dt);
    for (double xx : {-1.0, 0.0, 1.3}) {
        const double got = condexp_quadrature_1d(spec, value, 0.0, xx, dt);
        CHECK(got == doctest::Approx(2.0 + damp * std::sin(xx)).epsilon(1e-8));
    }

    // Bootstrap standard error of the regression prediction.
    const int B = 20;
    std::vector<RegressionFit> boots;
    CounterRng brng(13, 5);
    for (int b = 0; b < B; ++b) {
        VectorXd xb(S), yb(S);
        for (int i = 0; i < S; ++i) {
            const int j = static_cast<int>(brng.next_u64() % S);
            xb(i) = x0(j);
            yb(i) = y1(j);
        }
        boots.push_back(condexp_regress(xb, yb, basis));
    }
    int inside = 0;
    const int points = 20;
    for (int p = 0; p < points; ++p) {
        const double xx = -2.0 + 4.0 * p / (points - 1);
        const double oracle = condexp_quadrature_1d(spec, value, 0.0, xx, dt);
        double mean = 0.0, var = 0.0;
        for (const auto& bf : boots) mean += bf(xx);
        mean /= B;
        for (const auto& bf : boots) var += (bf(xx) - mean) * (bf(xx) - mean);
        var /= (B - 1);
        const double se = std::sqrt(var) + 1e-6;
        if (std::abs(fit(xx) - oracle) < 3.0 * se + 3e-3) ++inside;
    }
    CHECK(inside >= 18);  // basis bias is part of the tolerance budget
}
