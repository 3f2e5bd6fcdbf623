#pragma once

#include "fpr/types.hpp"

#include <cstddef>
#include <vector>

namespace fpr {

/// A non-finite iterate was overwritten before the next step.
struct ResetEvent {
    std::size_t iteration = 0;
    std::size_t first_bad_index = 0;  ///< 0-based time index of the first non-finite row

    friend bool operator==(const ResetEvent&, const ResetEvent&) = default;
};

/// Per-solve diagnostics shared by the DEER and ELK drivers.
///
/// Histories hold one entry per iteration when recording is enabled: the
/// residual max-abs and merit of the new iterate, and the MAD between the new
/// and the previous iterate.
struct SolveReport {
    std::size_t iterations = 0;
    bool converged = false;
    Real final_residual = 0;
    std::vector<Real> residual_norm_history;
    std::vector<Real> merit_history;
    std::vector<Real> mad_history;
    std::vector<ResetEvent> reset_events;
    std::size_t nonfinite_iterations = 0;  ///< iterations that produced any non-finite entry
    std::size_t ridge_activations = 0;     ///< ELK only: regularized Kalman combines
    std::size_t peak_element_bytes = 0;
    double wall_seconds = 0;
    std::vector<double> wall_time_per_iteration;

    [[nodiscard]] double seconds_per_iteration() const noexcept {
        return iterations == 0 ? 0.0 : wall_seconds / static_cast<double>(iterations);
    }
};

}  // namespace fpr
