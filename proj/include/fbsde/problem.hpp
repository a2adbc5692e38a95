#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "fbsde/jump_measure.hpp"
#include "fbsde/tape.hpp"
#include "fbsde/time_grid.hpp"

namespace fbsde {

// How the scalar mark acts on the d-dimensional forward state in the
// high-dimensional benchmark: either every coordinate jumps by e (the
// coefficient read literally) or the coordinate sum jumps by e (consistent
// with the closed-form solution's argument xbar + e). The latter is the
// default.
enum class MarkMode : std::uint8_t { aggregate_shift, per_coordinate };

// One FBSDEJ / PIDE instance as a coefficient bundle. Immutable after
// construction; every callable is reentrant.
struct ProblemSpec {
    std::string name;
    int d = 1;
    double terminal_time = 1.0;
    Eigen::VectorXd xi;

    std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, double y)> drift;
    std::function<Eigen::MatrixXd(double t, const Eigen::VectorXd& x, double y)> diffusion;
    std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, double y, double e)>
        jump_coeff;
    std::function<double(double t, const Eigen::VectorXd& x, double y, const Eigen::VectorXd& z,
                         double gamma)>
        driver;
    std::function<double(const Eigen::VectorXd& x)> terminal;
    JumpMeasureSpec measure;

    // Closed-form solution when known, with its gradient (for oracle
    // policies and error measurement).
    std::function<double(double t, const Eigen::VectorXd& x)> exact_u;
    std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x)> exact_grad;

    // Structure flags used for fast vectorized simulation.
    bool drift_zero = true;
    bool sigma_scalar_diag = true;  // sigma = sigma_scale * I
    double sigma_scale = 1.0;
    bool beta_linear = true;  // beta(t,x,y,e) = e * beta_dir
    Eigen::VectorXd beta_dir;
    bool y_coupled_forward = false;

    // Tape builders for the deep solver. X, Y, Z, Gamma are node ids of
    // [batch x d], [batch x 1], [batch x d], [batch x 1] values.
    std::function<int(Tape&, double t, int X, int Y, int Z, int Gamma)> driver_graph;
    std::function<int(Tape&, int X)> terminal_graph;
    // Optional: drift as a graph so gradients flow through a Y-coupled
    // forward state.
    std::function<int(Tape&, double t, int X, int Y)> drift_graph;

    bool has_exact() const { return static_cast<bool>(exact_u); }

    // Exact Z = sigma^T grad_u and Gamma = B[u] along exact solutions.
    Eigen::VectorXd exact_z(double t, const Eigen::VectorXd& x) const;
    double exact_gamma(double t, const Eigen::VectorXd& x) const;

    void validate() const;
};

// The 1-d benchmark: b = 0, sigma = 1, beta(e) = e, uniform marks on [-1,1],
// gamma = 1, manufactured driver with exact solution u(t,x) = sin(x+t) + 2.
ProblemSpec example_1d(double terminal_time = 1.0, int quad_order = 32);

// The d-dimensional benchmark: b = 0, sigma = I/sqrt(d), scalar marks with
// the driver written in xbar = sum_i x_i; exact solution sin(xbar+t) + 2.
ProblemSpec example_highdim(int d, double terminal_time = 1.0,
                            MarkMode mode = MarkMode::aggregate_shift, int quad_order = 32);

// example_1d with drift b = coupling * y: no closed form, used to exercise
// the Markovian iteration's contraction on a genuinely coupled instance.
ProblemSpec example_1d_coupled(double coupling = 0.05, double terminal_time = 1.0,
                               int quad_order = 32);

// Residual of (d/dt)u + L u + f(t, x, u, sigma^T grad u, B[u]) at one point,
// with derivatives by central finite differences and the nonlocal terms by
// quadrature. Near zero iff u solves the PIDE at (t,x).
double pide_residual(const ProblemSpec& spec, double t, const Eigen::VectorXd& x,
                     const std::function<double(double, const Eigen::VectorXd&)>& u,
                     double fd_step = 1e-4);

}  // namespace fbsde
