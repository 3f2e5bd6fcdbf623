#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <thread>

namespace fpr {

/// Worker-pool settings shared by every routine that fans out over time.
///
/// `workers == 1` forces the sequential code paths. `chunk == 0` selects the
/// default chunk size max(T / (8 * workers), 64).
struct Execution {
    int workers = default_workers();
    std::size_t chunk = 0;

    [[nodiscard]] static int default_workers() noexcept {
        const unsigned n = std::thread::hardware_concurrency();
        return n == 0 ? 1 : static_cast<int>(n);
    }

    [[nodiscard]] static Execution sequential() noexcept { return Execution{1, 0}; }

    [[nodiscard]] bool is_parallel() const noexcept { return workers > 1; }

    [[nodiscard]] std::size_t chunk_for(std::size_t n) const noexcept {
        if (chunk != 0) return chunk;
        const auto w = static_cast<std::size_t>(std::max(workers, 1));
        return std::max<std::size_t>(n / (8 * w), 64);
    }
};

/// Runs body(i) for i in [0, n), spread over `exec.workers` OpenMP threads.
template <class Body>
void parallel_for(std::size_t n, const Execution& exec, Body&& body) {
    if (!exec.is_parallel() || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for num_threads(exec.workers) schedule(static)
    for (std::int64_t i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace fpr
