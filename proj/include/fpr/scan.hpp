#pragma once

// Associative inclusive scan plus the affine-recurrence element algebras used
// to solve x_t = A_t x_{t-1} + b_t for all t at once.

#include "fpr/parallel.hpp"
#include "fpr/types.hpp"

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fpr::scan {

/// Affine map x ↦ A x + b with a dense A.
struct DenseAffineElement {
    Matrix A;
    Vector b;
};

/// Affine map x ↦ diag(a) x + b.
struct DiagAffineElement {
    Vector a;
    Vector b;
};

[[nodiscard]] DenseAffineElement dense_identity(std::size_t dim);
[[nodiscard]] DiagAffineElement diag_identity(std::size_t dim);

[[nodiscard]] std::size_t element_dim(const DenseAffineElement& e);
[[nodiscard]] std::size_t element_dim(const DiagAffineElement& e);

/// Storage held by one element, in bytes.
[[nodiscard]] std::size_t element_bytes(const DenseAffineElement& e);
[[nodiscard]] std::size_t element_bytes(const DiagAffineElement& e);

/// Apply `first`, then `second`: (A₂A₁, A₂b₁ + b₂). Throws DimensionError on mismatch.
[[nodiscard]] DenseAffineElement combine(const DenseAffineElement& first, const DenseAffineElement& second);
[[nodiscard]] DiagAffineElement combine(const DiagAffineElement& first, const DiagAffineElement& second);

/// Unchecked combine writing into preallocated `out` (must not alias the inputs).
void combine_into(const DenseAffineElement& first, const DenseAffineElement& second, DenseAffineElement& out);
void combine_into(const DiagAffineElement& first, const DiagAffineElement& second, DiagAffineElement& out);

enum class ScanMode { sequential, parallel };

/// Accounting hook: element storage allocated during one scan call.
struct ScanStats {
    std::size_t input_bytes = 0;
    std::size_t output_bytes = 0;
    std::size_t workspace_bytes = 0;  ///< per-chunk totals and carries
    std::size_t chunks = 1;

    [[nodiscard]] std::size_t peak_bytes() const noexcept { return input_bytes + output_bytes + workspace_bytes; }
};

namespace detail {

template <class Element>
std::size_t bytes_of(std::span<const Element> xs) {
    std::size_t total = 0;
    for (const auto& x : xs) total += element_bytes(x);
    return total;
}

}  // namespace detail

/// All-prefix reduction: out[t] = op(out[t-1], in[t]), out[0] = in[0].
///
/// `op(first, second, out)` writes the composition "first then second" into a
/// preallocated element of the same shape. Parallel mode is a blocked
/// reduce-then-propagate scan: each chunk is reduced independently, the chunk
/// totals are scanned, and every chunk is then rescanned from its carry. Work
/// is about 2T combines; the two chunk passes run on `exec.workers` threads.
///
/// Non-finite values are not filtered.
template <class Element, class Op>
std::vector<Element> inclusive_scan(std::span<const Element> in, Op&& op, ScanMode mode,
                                    const Execution& exec = Execution{}, ScanStats* stats = nullptr) {
    if (in.empty()) throw std::invalid_argument("inclusive_scan: empty input");
    const std::size_t dim = element_dim(in.front());
    for (std::size_t t = 1; t < in.size(); ++t) {
        if (element_dim(in[t]) != dim) {
            throw DimensionError("inclusive_scan: element " + std::to_string(t) + " has a different dimension");
        }
    }

    const std::size_t n = in.size();
    std::vector<Element> out(in.begin(), in.end());
    ScanStats local;
    local.input_bytes = detail::bytes_of(in);
    local.output_bytes = detail::bytes_of(std::span<const Element>(out));

    const bool parallel = mode == ScanMode::parallel && exec.is_parallel();
    const std::size_t chunk = parallel ? exec.chunk_for(n) : n;
    const std::size_t chunks = (n + chunk - 1) / chunk;
    local.chunks = chunks;

    if (chunks <= 1) {
        for (std::size_t t = 1; t < n; ++t) op(out[t - 1], in[t], out[t]);
        if (stats) *stats = local;
        return out;
    }

    // Pass 1: reduce every chunk but the last.
    std::vector<Element> totals(chunks - 1, in.front());
    std::vector<Element> scratch(chunks - 1, in.front());
    parallel_for(chunks - 1, exec, [&](std::size_t c) {
        const std::size_t begin = c * chunk;
        const std::size_t end = begin + chunk;
        Element& acc = totals[c];
        Element& tmp = scratch[c];
        acc = in[begin];
        for (std::size_t t = begin + 1; t < end; ++t) {
            op(acc, in[t], tmp);
            std::swap(acc, tmp);
        }
    });

    // Carries: carry[c] is the reduction of all chunks before c.
    std::vector<Element> carries(chunks, in.front());
    carries[1] = totals[0];
    for (std::size_t c = 2; c < chunks; ++c) op(carries[c - 1], totals[c - 1], carries[c]);
    local.workspace_bytes = detail::bytes_of(std::span<const Element>(totals)) +
                            detail::bytes_of(std::span<const Element>(scratch)) +
                            detail::bytes_of(std::span<const Element>(carries));

    // Pass 2: rescan each chunk seeded with its carry.
    parallel_for(chunks, exec, [&](std::size_t c) {
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (c == 0) {
            for (std::size_t t = begin + 1; t < end; ++t) op(out[t - 1], in[t], out[t]);
            return;
        }
        op(carries[c], in[begin], out[begin]);
        for (std::size_t t = begin + 1; t < end; ++t) op(out[t - 1], in[t], out[t]);
    });

    if (stats) *stats = local;
    return out;
}

[[nodiscard]] std::vector<DenseAffineElement> inclusive_scan(std::span<const DenseAffineElement> in, ScanMode mode,
                                                             const Execution& exec = Execution{},
                                                             ScanStats* stats = nullptr);
[[nodiscard]] std::vector<DiagAffineElement> inclusive_scan(std::span<const DiagAffineElement> in, ScanMode mode,
                                                            const Execution& exec = Execution{},
                                                            ScanStats* stats = nullptr);

}  // namespace fpr::scan
