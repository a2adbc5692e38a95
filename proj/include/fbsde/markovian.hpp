#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbsde/problem.hpp"
#include "fbsde/regression.hpp"
#include "fbsde/time_grid.hpp"

namespace fbsde {

struct MarkovianConfig {
    int samples = 20000;
    int max_sweeps = 20;
    double tol = 1e-3;  // stop when the sup-delta between sweeps drops below
    RegressionBasis basis;
    std::uint64_t seed = 0;
    int eval_points = 41;            // sup-delta evaluation grid over [basis.lo, basis.hi]
    bool resample_per_sweep = false; // same noise every sweep by default (fixed-point semantics)
    double ridge = 1e-8;
    // The value iterate is clamped to the terminal-value hull widened by
    // value_margin * max(hull width, 1). Tail regression noise would
    // otherwise ratchet through drivers with superlinear growth in y.
    double value_margin = 1.0;
};

struct SweepRecord {
    int m = 0;
    double sup_delta = 0.0;
    double u_at_xi = 0.0;
    double cond_max = 0.0;
};

// Value function of sweep m, stored as regression coefficients per time
// step, plus the Z and Gamma projections of the final backward pass.
// Sweep 0 is the empty state with u == 0.
struct MarkovianState {
    int steps = 0;
    int sweep_index = 0;
    std::vector<RegressionFit> u;                   // per step n = 0..N-1
    std::vector<std::vector<RegressionFit>> z;      // per step, per component
    std::vector<RegressionFit> gamma_fit;           // per step
    std::vector<SweepRecord> history;

    // u at grid step n; n == N evaluates the terminal condition.
    double eval_u(const ProblemSpec& spec, int n, double x) const;
};

// One Markovian iteration sweep: simulate the forward chain with the
// previous sweep's value function in the coefficients, then walk backward
// projecting Z, Gamma and Y by least-squares regression. d = 1 only.
MarkovianState markovian_sweep(const MarkovianState& prev, const ProblemSpec& spec,
                               const TimeGrid& grid, const MarkovianConfig& cfg);

// Sweeps until sup-delta < tol or max_sweeps, recording one SweepRecord per
// sweep.
MarkovianState markovian_solve(const ProblemSpec& spec, const TimeGrid& grid,
                               const MarkovianConfig& cfg);

// CSV columns: m, sup_delta, u_at_xi, condition_number_max.
void write_sweep_csv(const MarkovianState& state, const std::string& path);

}  // namespace fbsde
