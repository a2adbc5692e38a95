#pragma once

#include <stdexcept>
#include <vector>

namespace fbsde {

// Partition 0 = t_0 < t_1 < ... < t_N = T.
struct TimeGrid {
    std::vector<double> nodes;

    TimeGrid() = default;
    explicit TimeGrid(std::vector<double> ts) : nodes(std::move(ts)) { validate(); }

    static TimeGrid uniform(int steps, double terminal_time) {
        if (steps < 1) throw std::invalid_argument("TimeGrid: need at least one step");
        if (!(terminal_time > 0.0)) throw std::invalid_argument("TimeGrid: T must be positive");
        std::vector<double> ts(steps + 1);
        for (int i = 0; i <= steps; ++i) ts[i] = terminal_time * i / steps;
        ts.back() = terminal_time;
        return TimeGrid(std::move(ts));
    }

    int steps() const { return static_cast<int>(nodes.size()) - 1; }
    double t(int n) const { return nodes[n]; }
    double dt(int n) const { return nodes[n + 1] - nodes[n]; }
    double terminal() const { return nodes.back(); }

    // Largest step size h = max dt_n.
    double h() const {
        double m = 0.0;
        for (int n = 0; n < steps(); ++n) m = std::max(m, dt(n));
        return m;
    }

    void validate() const {
        if (nodes.size() < 2) throw std::invalid_argument("TimeGrid: need at least two nodes");
        if (nodes.front() != 0.0) throw std::invalid_argument("TimeGrid: must start at 0");
        for (std::size_t i = 1; i < nodes.size(); ++i)
            if (!(nodes[i] > nodes[i - 1]))
                throw std::invalid_argument("TimeGrid: nodes must be strictly increasing");
    }
};

}  // namespace fbsde
