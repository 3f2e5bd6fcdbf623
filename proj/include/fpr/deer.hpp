#pragma once

// DEER and quasi-DEER: undamped (quasi-)Newton iteration on the residual
// r(s) = 0. Each Newton update solves the block-bidiagonal system J Δs = -r,
// which is the linear recurrence
//
//   Δs_1 = -r_1,   Δs_t = (∂f/∂s at s_{t-1}) Δs_{t-1} - r_t,
//
// evaluated with an affine inclusive scan. The diagonal mode keeps only the
// Jacobian diagonals.

#include "fpr/core.hpp"
#include "fpr/scan.hpp"
#include "fpr/solve_report.hpp"

#include <optional>
#include <variant>
#include <vector>

namespace fpr::deer {

using ElementSequence =
    std::variant<std::vector<scan::DenseAffineElement>, std::vector<scan::DiagAffineElement>>;

/// Element 0 is (0, -r_1); element k >= 1 is (J_k or diag(J_k), -r_{k+1}) with the
/// Jacobian of step k evaluated at row k-1. Throws PreconditionError on a
/// non-finite trace.
[[nodiscard]] ElementSequence build_elements(const StateTrace& trace, const DynamicsModel& model, JacobianMode mode,
                                             const Execution& exec = Execution::sequential());

/// Same as above with a residual the caller has already evaluated.
[[nodiscard]] ElementSequence build_elements(const StateTrace& trace, const ResidualTrace& r,
                                             const DynamicsModel& model, JacobianMode mode,
                                             const Execution& exec = Execution::sequential());

/// One (quasi-)Newton update s + Δs. The result may contain non-finite values.
[[nodiscard]] StateTrace deer_step(const StateTrace& trace, const DynamicsModel& model, JacobianMode mode,
                                   const Execution& exec = Execution::sequential(),
                                   scan::ScanStats* stats = nullptr);

enum class ResetPolicy {
    nonfinite,  ///< overwrite only the non-finite entries
    suffix,     ///< overwrite every row from the first non-finite row onwards
};

struct DeerConfig {
    JacobianMode mode = JacobianMode::dense;
    /// Unset: T iterations, raised to 10·T once a reset has happened.
    std::optional<std::size_t> max_iters;
    Real tol = Real(1e-8);
    Real reset_value = 0;
    ResetPolicy reset_policy = ResetPolicy::nonfinite;
    bool record_history = true;
    Execution exec{};

    void validate() const;
};

struct DeerResult {
    StateTrace trace;
    SolveReport report;
};

/// Iterates deer_step until the residual max-abs is ≤ tol or the iteration
/// limit is hit. Non-convergence is reported, not thrown.
[[nodiscard]] DeerResult deer_solve(const StateTrace& initial, const DynamicsModel& model, const DeerConfig& config);

/// Overwrites non-finite entries per `policy`; returns the first bad row, if any.
std::optional<std::size_t> reset_nonfinite(StateTrace& trace, Real value, ResetPolicy policy);

/// Largest k such that every residual entry of rows 0..k-1 is ≤ tol in magnitude.
[[nodiscard]] std::size_t converged_prefix_length(const StateTrace& trace, const DynamicsModel& model, Real tol);

}  // namespace fpr::deer
