#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace sdgzsl {

// Worker cap: SDGZSL_THREADS env var, else 1. Parallel sections must produce
// results identical to the sequential computation for any worker count, so
// they are only used for row-independent work writing disjoint outputs.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("SDGZSL_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    return 1;
}

// Split [0, n) into contiguous chunks and run fn(lo, hi) on each, using at
// most worker_count() threads. fn must not touch shared mutable state.
inline void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const std::size_t workers = std::min(worker_count(), n == 0 ? std::size_t{1} : n);
    if (workers <= 1 || n == 0) {
        if (n > 0) fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        if (lo >= n) break;
        const std::size_t hi = std::min(lo + chunk, n);
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

} // namespace sdgzsl
