#include "fbsde/noise.hpp"

#include <cmath>
#include <stdexcept>

#include "fbsde/rng.hpp"

namespace fbsde {

NoiseBlock make_noise(const TimeGrid& grid, int dim, int samples, const JumpMeasureSpec& measure,
                      std::uint64_t seed) {
    if (dim < 1) throw std::invalid_argument("make_noise: dim must be >= 1");
    if (samples < 1) throw std::invalid_argument("make_noise: samples must be >= 1");
    grid.validate();

    NoiseBlock block;
    block.grid = grid;
    block.dim = dim;
    block.samples = samples;
    block.seed = seed;

    const int N = grid.steps();
    block.dW.resize(N);
    block.jumps.resize(N);

    for (int n = 0; n < N; ++n) {
        const double sq = std::sqrt(grid.dt(n));
        Eigen::MatrixXd& w = block.dW[n];
        w.resize(samples, dim);
        auto& step = block.jumps[n];
        step.offsets.assign(samples + 1, 0);

        // First pass: Brownian increments and jump counts.
        std::vector<int> counts(samples);
        const double mean = measure.total_intensity() * grid.dt(n);
        for (int i = 0; i < samples; ++i) {
            CounterRng gauss(seed, CounterRng::kStreamBrownian, static_cast<std::uint64_t>(i),
                             static_cast<std::uint64_t>(n));
            for (int k = 0; k < dim; ++k) w(i, k) = sq * gauss.normal();
            CounterRng jump(seed, CounterRng::kStreamJumps, static_cast<std::uint64_t>(i),
                            static_cast<std::uint64_t>(n));
            counts[i] = jump.poisson(mean);
            step.offsets[i + 1] = step.offsets[i] + counts[i];
        }

        // Second pass: marks, drawn i.i.d. from the mark density.
        step.marks.resize(step.offsets.back());
        for (int i = 0; i < samples; ++i) {
            if (counts[i] == 0) continue;
            CounterRng jump(seed, CounterRng::kStreamJumps, static_cast<std::uint64_t>(i),
                            static_cast<std::uint64_t>(n));
            (void)jump.poisson(mean);  // replay the count draw to stay aligned
            for (int k = 0; k < counts[i]; ++k)
                step.marks[step.offsets[i] + k] = measure.sample_mark(jump.uniform());
        }
    }
    return block;
}

}  // namespace fbsde
