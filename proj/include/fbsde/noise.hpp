#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fbsde/jump_measure.hpp"
#include "fbsde/time_grid.hpp"

namespace fbsde {

// Driving noise for one batch of paths: Brownian increments per step plus the
// jump marks landing in each interval. Only the interval aggregates are kept;
// the Euler scheme never needs jump times.
struct NoiseBlock {
    TimeGrid grid;
    int dim = 0;
    int samples = 0;
    std::uint64_t seed = 0;

    // dW[n] is samples x dim.
    std::vector<Eigen::MatrixXd> dW;

    // Marks per step in CSR layout: marks of sample i in step n live at
    // [offsets[n][i], offsets[n][i+1]).
    struct StepJumps {
        std::vector<std::int32_t> offsets;  // samples + 1
        std::vector<double> marks;

        int count(int sample) const { return offsets[sample + 1] - offsets[sample]; }
    };
    std::vector<StepJumps> jumps;

    int total_jumps(int step) const { return jumps[step].offsets.back(); }
};

// Deterministic in all arguments: the same tuple reproduces the block
// bit-for-bit, and each (sample, step) cell derives its own RNG key so
// generation order does not matter.
NoiseBlock make_noise(const TimeGrid& grid, int dim, int samples, const JumpMeasureSpec& measure,
                      std::uint64_t seed);

}  // namespace fbsde
