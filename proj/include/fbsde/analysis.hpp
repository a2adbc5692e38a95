#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fbsde/markovian.hpp"
#include "fbsde/problem.hpp"
#include "fbsde/quad_oracle.hpp"
#include "fbsde/rollout.hpp"
#include "fbsde/train.hpp"

namespace fbsde {

// The four error components of the discretization error functional:
// sup-in-time mean-square errors for X and Y (grid nodes only) and the
// dt-weighted sums for Z and Gamma, against the closed-form solution along
// the simulated paths. Standard errors are per-component Monte Carlo
// estimates.
struct ErrorReport {
    double x_err = 0.0, y_err = 0.0, z_err = 0.0, gamma_err = 0.0;
    double x_se = 0.0, y_se = 0.0, z_se = 0.0, gamma_se = 0.0;
    int samples = 0;
    double h = 0.0;

    double total() const { return x_err + y_err + z_err + gamma_err; }
};

// Compare already-simulated trajectories against the exact solution.
ErrorReport measure_errors_paths(const PathBatch& paths, const ProblemSpec& spec,
                                 const TimeGrid& grid);

// Rollout with the given policy source on fresh noise, then compare.
ErrorReport measure_errors(const ParamSet& ps, const ProblemSpec& spec, const TimeGrid& grid,
                           int samples, std::uint64_t seed);
ErrorReport measure_errors(const OraclePolicies& pol, const ProblemSpec& spec,
                           const TimeGrid& grid, int samples, std::uint64_t seed);
ErrorReport measure_errors(const MarkovianState& state, const ProblemSpec& spec,
                           const TimeGrid& grid, int samples, std::uint64_t seed);
ErrorReport measure_errors(const QuadratureSolution& sol, const ProblemSpec& spec,
                           const TimeGrid& grid, int samples, std::uint64_t seed);

void write_error_csv(const ErrorReport& report, const std::string& path);

enum class RateMode : std::uint8_t { oracle_policy, markovian_quadrature };

struct RatePoint {
    int n = 0;
    double h = 0.0;
    double error = 0.0;
    double se = 0.0;
};

struct RateReport {
    std::vector<RatePoint> points;
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    bool degenerate = false;  // errors at machine zero; no slope to fit
    bool noisy = false;       // error bars exceed level-to-level differences
};

// Log-log fit of total squared error against h over the given grid sizes.
RateReport rate_study(const ProblemSpec& spec, const std::vector<int>& n_list, int samples,
                      RateMode mode, std::uint64_t seed);

void write_rate_csv(const RateReport& report, const std::string& path);

// Spearman rank correlation between loss and Y0 squared error across
// training checkpoints, plus the nonnegative affine bound
// err2 <= a + b * loss fitted by clamped least squares.
struct PosteriorCheck {
    double spearman = 0.0;
    double a = 0.0;
    double b = 0.0;
    bool degenerate = false;  // constant loss or fewer than 2 points
    int n = 0;
};

PosteriorCheck posterior_check(const std::vector<std::pair<double, double>>& loss_and_err2);

}  // namespace fbsde
