#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "fbsde/problem.hpp"

namespace fbsde {

// Natural cubic spline on a uniform grid, linear beyond the ends.
class CubicSpline {
  public:
    CubicSpline() = default;
    CubicSpline(double lo, double hi, std::vector<double> values);
    double operator()(double x) const;
    double lo() const { return lo_; }
    double hi() const { return hi_; }

  private:
    double lo_ = 0.0, hi_ = 1.0, h_ = 1.0;
    std::vector<double> y_;
    std::vector<double> m_;  // second derivatives at the knots
};

// Distribution kernel of the one-step increment
//     W = sigma * dW + mark_scale * (S - dt * mean_jump),    dW ~ N(0, dt),
// where S is the sum of the Poisson(intensity*dt) interval marks. The
// compensator shift is *not* included; callers fold drift and compensator
// into the evaluation point. Conditional expectations become 1-d
// convolutions against precomputed kernels:
//   expect:        E[ f(x0 + W) ]
//   expect_zw:     E[ f(x0 + W) dW ] / dt
//   expect_gw:     E[ f(x0 + W) Mgamma ] / dt   (constant gamma only)
// Poisson counts are truncated where the tail drops below 1e-12; tail_ok()
// reports whether that bound was met.
class IncrementKernel {
  public:
    IncrementKernel(const JumpMeasureSpec& measure, double sigma, double mark_scale, double dt);

    double expect(const std::function<double(double)>& f, double x0) const;
    double expect_zw(const std::function<double(double)>& f, double x0) const;
    double expect_gw(const std::function<double(double)>& f, double x0) const;

    bool tail_ok() const { return tail_ok_; }
    double dt() const { return dt_; }

    // Kernel cache keyed on (measure parameters, sigma, mark_scale, dt).
    static std::shared_ptr<const IncrementKernel> cached(const JumpMeasureSpec& measure,
                                                         double sigma, double mark_scale,
                                                         double dt);

  private:
    double weighted(const std::function<double(double)>& f, double x0,
                    const std::vector<double>& kernel) const;

    double dt_ = 0.0;
    bool tail_ok_ = true;
    std::vector<double> node_;    // quadrature nodes in w
    std::vector<double> wgt_;     // quadrature weights
    std::vector<double> k0_;      // density kernel at nodes
    std::vector<double> kz_;      // Brownian-weighted kernel
    std::vector<double> kg_;      // jump-count-weighted kernel (empty if gamma non-constant)
};

// Conditional expectation E[ y_next(X_{n+1}) | X_n = x ] for the one-step
// Euler transition of spec at time t with step dt, evaluated by quadrature.
// Requires d = 1, sigma(t,x,.) > 0 and a mark-linear jump coefficient.
double condexp_quadrature_1d(const ProblemSpec& spec,
                             const std::function<double(double)>& y_next, double t, double x,
                             double dt);

// Regression-free backward solve of the discrete system on an x-grid:
// exact conditional expectations via IncrementKernel, value functions
// stored as splines per step.
struct QuadratureSolution {
    TimeGrid grid;
    std::vector<CubicSpline> u;      // per step n = 0..N-1 (terminal handled by g)
    std::vector<CubicSpline> z;      // Z-hat per step
    std::vector<CubicSpline> gamma;  // Gamma-hat per step

    double eval_u(const ProblemSpec& spec, int n, double x) const;
};

QuadratureSolution quadrature_backward_solve(const ProblemSpec& spec, const TimeGrid& grid,
                                             double x_lo = -12.0, double x_hi = 12.0,
                                             int points = 1201);

}  // namespace fbsde
