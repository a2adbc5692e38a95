#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fbsde/net.hpp"
#include "fbsde/noise.hpp"
#include "fbsde/problem.hpp"
#include "fbsde/tape.hpp"

namespace fbsde {

struct DivergenceError : std::runtime_error {
    int step;
    explicit DivergenceError(int n)
        : std::runtime_error("rollout diverged at step " + std::to_string(n)), step(n) {}
};

// Simulated trajectories of the discrete scheme under some policy.
struct PathBatch {
    std::vector<Eigen::MatrixXd> X;      // N+1 entries, samples x d
    std::vector<Eigen::VectorXd> Y;      // N+1 entries
    std::vector<Eigen::MatrixXd> Z;      // N entries, samples x d
    std::vector<Eigen::VectorXd> Gamma;  // N entries

    int samples() const { return X.empty() ? 0 : static_cast<int>(X.front().rows()); }
    int steps() const { return static_cast<int>(Z.size()); }
};

struct RolloutGraph {
    PathBatch paths;
    int y_terminal = -1;  // node id, [samples x 1]
    int g_terminal = -1;  // node id, [samples x 1]
    int loss = -1;        // node id, scalar: mean |Y_T - g(X_T)|^2
};

// Forward-backward Euler rollout with Z and the U kernel read from the
// step networks, Gamma by quadrature of the U net against gamma * lambda,
// and the Y step driven by the explicit driver evaluated at (t_n, X_n, Y_n).
// Fully differentiable in the parameters through the supplied tape.
RolloutGraph rollout(Tape& tape, const ParamSet& ps, const TapeBinding& bind,
                     const ProblemSpec& spec, const TimeGrid& grid, const NoiseBlock& noise);

// Terminal loss only; builds a throwaway tape.
double terminal_loss(const ParamSet& ps, const ProblemSpec& spec, const TimeGrid& grid,
                     const NoiseBlock& noise);

// Quadrature of a mark kernel against gamma(e) lambda(de).
double gamma_of(const std::function<double(double)>& kernel, const JumpMeasureSpec& measure);

// Closed-form policies built from a known solution: Y0 = u(0,xi),
// Z = sigma^T grad u, U(e) = u(t, x + beta(e)) - u(t, x).
struct OraclePolicies {
    double y0 = 0.0;
    std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, double y)> z;
    std::function<double(double t, const Eigen::VectorXd& x, double y, double e)> u_kernel;
};

OraclePolicies exact_policies(const ProblemSpec& spec);

// Same discretization as rollout() but with numeric policies; no autodiff.
PathBatch rollout_policies(const OraclePolicies& pol, const ProblemSpec& spec,
                           const TimeGrid& grid, const NoiseBlock& noise);

double terminal_loss_policies(const OraclePolicies& pol, const ProblemSpec& spec,
                              const TimeGrid& grid, const NoiseBlock& noise);

}  // namespace fbsde
