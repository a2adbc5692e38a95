#pragma once

#include <atomic>

namespace fbsde {

// Worker budget for the embarrassingly parallel estimators. 1 = strict
// single-threaded mode (the test-suite default); higher values only change
// scheduling, never results, because chunks are merged in index order.
inline std::atomic<int>& parallel_threads() {
    static std::atomic<int> threads{1};
    return threads;
}

inline void set_parallel_threads(int n) { parallel_threads().store(n < 1 ? 1 : n); }

}  // namespace fbsde
