#include <doctest.h>

#include <cmath>

#include "fbsde/jump_measure.hpp"
#include "fbsde/noise.hpp"
#include "fbsde/quadrature.hpp"
#include "fbsde/time_grid.hpp"

using namespace fbsde;

TEST_CASE("gauss-legendre integrates polynomials up to degree 2n-1 exactly") {
    for (int n : {2, 5, 8, 16, 32}) {
        const QuadRule rule = gauss_legendre(n);
        // integral over [-1,1] of x^k is 0 (odd) or 2/(k+1) (even)
        for (int k = 0; k <= 2 * n - 1; ++k) {
            const double got = integrate(rule, [&](double x) { return std::pow(x, k); });
            const double want = (k % 2 == 1) ? 0.0 : 2.0 / (k + 1);
            CHECK(std::abs(got - want) < 1e-12);
        }
    }
}

TEST_CASE("levy_integral on the uniform measure") {
    const JumpMeasureSpec m = JumpMeasureSpec::uniform(1.0);
    CHECK(m.total_intensity() == doctest::Approx(2.0));

    SUBCASE("odd symmetry") {
        CHECK(std::abs(levy_integral([](double e) { return e; }, m)) < 1e-14);
    }
    SUBCASE("total mass equals the jump intensity 2*delta") {
        CHECK(levy_integral([](double) { return 1.0; }, m) == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("quadratic moment") {
        CHECK(std::abs(levy_integral([](double e) { return e * e; }, m) - 2.0 / 3.0) < 1e-10);
    }
    SUBCASE("degree 2q-1 polynomial is exact") {
        const int deg = 2 * m.quad_order() - 1;
        CHECK(std::abs(levy_integral([&](double e) { return std::pow(e, deg); }, m)) < 1e-12);
    }
}

TEST_CASE("compensator_drift") {
    const JumpMeasureSpec m = JumpMeasureSpec::uniform(1.0);
    SUBCASE("beta(e) = e integrates to zero by symmetry") {
        const auto v = compensator_drift(
            [](double e) { return Eigen::VectorXd::Constant(2, e); }, m);
        CHECK(v.size() == 2);
        CHECK(std::abs(v(0)) < 1e-14);
    }
    SUBCASE("constant beta picks up the total intensity") {
        const auto v = compensator_drift(
            [](double) { return Eigen::VectorXd::Constant(1, 3.5); }, m);
        CHECK(v(0) == doctest::Approx(7.0).epsilon(1e-12));
    }
    SUBCASE("zero beta") {
        const auto v =
            compensator_drift([](double) { return Eigen::VectorXd::Zero(1); }, m);
        CHECK(v(0) == 0.0);
    }
}

TEST_CASE("jump measure invariants are enforced") {
    CHECK_THROWS_AS(JumpMeasureSpec(1.0, [](double) { return 1.0; }, 2.0,  // not a density
                                    [](double) { return 1.0; }, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(JumpMeasureSpec(1.0, [](double) { return 0.5; }, 2.0,
                                    [](double e) { return 2.0 * e; }, 1.0),  // |gamma| > bound
                    std::invalid_argument);
    CHECK_THROWS_AS(JumpMeasureSpec(-1.0, [](double) { return 0.5; }, 2.0,
                                    [](double) { return 1.0; }, 1.0),
                    std::invalid_argument);
}

TEST_CASE("make_noise argument validation") {
    const JumpMeasureSpec m = JumpMeasureSpec::uniform(1.0);
    const TimeGrid grid = TimeGrid::uniform(4, 1.0);
    CHECK_THROWS_AS(make_noise(grid, 0, 8, m, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_noise(grid, 1, 0, m, 1), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid({0.0, 0.5, 0.5, 1.0}), std::invalid_argument);
}

TEST_CASE("make_noise is a pure function of its arguments") {
    const JumpMeasureSpec m = JumpMeasureSpec::uniform(1.0);
    const TimeGrid grid = TimeGrid::uniform(5, 1.0);
    const NoiseBlock a = make_noise(grid, 3, 32, m, 987654321);
    const NoiseBlock b = make_noise(grid, 3, 32, m, 987654321);
    for (int n = 0; n < 5; ++n) {
        CHECK(a.dW[n] == b.dW[n]);
        CHECK(a.jumps[n].offsets == b.jumps[n].offsets);
        CHECK(a.jumps[n].marks == b.jumps[n].marks);
    }
    const NoiseBlock c = make_noise(grid, 3, 32, m, 987654322);
    CHECK(a.dW[0] != c.dW[0]);
}

TEST_CASE("zero intensity produces no jumps") {
    const JumpMeasureSpec m(1.0, [](double) { return 0.5; }, 0.0, [](double) { return 1.0; },
                            1.0);
    const NoiseBlock noise = make_noise(TimeGrid::uniform(6, 1.0), 1, 64, m, 7);
    for (int n = 0; n < 6; ++n) CHECK(noise.total_jumps(n) == 0);
}

TEST_CASE("moment tests within 3 sigma") {
    const JumpMeasureSpec m = JumpMeasureSpec::uniform(1.0);
    const int steps = 20;
    const int samples = 50000;  // 1e6 (sample, step) cells
    const TimeGrid grid = TimeGrid::uniform(steps, 1.0);
    const double dt = grid.dt(0);
    const NoiseBlock noise = make_noise(grid, 1, samples, m, 20240817);

    const double cells = static_cast<double>(samples) * steps;

    SUBCASE("brownian increments: mean 0, variance dt") {
        double sum = 0.0, sumsq = 0.0;
        for (int n = 0; n < steps; ++n) {
            sum += noise.dW[n].col(0).sum();
            sumsq += noise.dW[n].col(0).squaredNorm();
        }
        const double mean = sum / cells;
        const double var = sumsq / cells - mean * mean;
        CHECK(std::abs(mean) < 3.0 * std::sqrt(dt / cells));
        // var of the variance estimator is 2 dt^2 / n for gaussians
        CHECK(std::abs(var - dt) < 3.0 * dt * std::sqrt(2.0 / cells));
    }

    SUBCASE("jump counts are Poisson(intensity * dt): mean = variance") {
        const double lam = m.total_intensity() * dt;  // 0.1
        double count_sum = 0.0, count_sumsq = 0.0;
        for (int n = 0; n < steps; ++n) {
            const auto& s = noise.jumps[n];
            for (int i = 0; i < samples; ++i) {
                const double c = s.count(i);
                count_sum += c;
                count_sumsq += c * c;
            }
        }
        const double mean = count_sum / cells;
        const double var = count_sumsq / cells - mean * mean;
        CHECK(std::abs(mean - lam) < 3.0 * std::sqrt(lam / cells));
        CHECK(std::abs(var - lam) < 5e-3);
    }

    SUBCASE("marks are i.i.d. from the mark density") {
        double mark_sum = 0.0, mark_sumsq = 0.0;
        long n_marks = 0;
        for (int n = 0; n < steps; ++n) {
            for (double e : noise.jumps[n].marks) {
                mark_sum += e;
                mark_sumsq += e * e;
                ++n_marks;
            }
        }
        REQUIRE(n_marks > 50000);
        const double mean = mark_sum / n_marks;
        // uniform on [-1,1]: mean 0, variance 1/3
        CHECK(std::abs(mean) < 3.0 * std::sqrt((1.0 / 3.0) / n_marks));
        CHECK(mark_sumsq / n_marks == doctest::Approx(1.0 / 3.0).epsilon(0.05));
    }
}

TEST_CASE("time grid basics") {
    const TimeGrid g = TimeGrid::uniform(20, 1.0);
    CHECK(g.steps() == 20);
    CHECK(g.h() == doctest::Approx(0.05));
    CHECK(g.terminal() == 1.0);
    CHECK_THROWS_AS(TimeGrid::uniform(0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid::uniform(5, -1.0), std::invalid_argument);
}
