#pragma once

// ELK and quasi-ELK: Levenberg-Marquardt damped Newton steps computed as the
// posterior mode (or filtered means) of a linear Gaussian state-space model.
//
// At iterate s⁽ⁱ⁾ the damped linearized least-squares objective
//
//   ½‖r(s⁽ⁱ⁾) + J(s⁽ⁱ⁾) Δs‖² + λ/2 ‖Δs‖²
//
// equals, up to a constant, the negative log joint of the LGSSM
//
//   s_1 ~ N(f_1(s_0), I)
//   s_t ~ N(f_t(s⁽ⁱ⁾_{t-1}) + F_t (s_{t-1} - s⁽ⁱ⁾_{t-1}), I)     t ≥ 2
//   y_t = s⁽ⁱ⁾_t ~ N(s_t, λ⁻¹ I)
//
// with F_t the dynamics Jacobian at s⁽ⁱ⁾_{t-1} (its diagonal in quasi mode).

#include "fpr/core.hpp"
#include "fpr/scan.hpp"
#include "fpr/solve_report.hpp"

#include <atomic>
#include <optional>
#include <span>
#include <vector>

namespace fpr::elk {

/// Linearized dynamics plus emissions for one ELK step. Index k is 0-based:
/// dynamics entries k = 0..T-2 describe the transition into row k+1.
struct Lgssm {
    JacobianMode mode = JacobianMode::dense;
    Real lambda = 1;
    Vector initial_mean;             ///< f_1(s_0); the initial covariance is I
    std::vector<Matrix> dynamics;    ///< dense mode: F for rows 1..T-1
    RowMatrix dynamics_diag;         ///< diagonal mode: (T-1)×D
    RowMatrix offsets;               ///< (T-1)×D, c = f(s⁽ⁱ⁾) - F s⁽ⁱ⁾
    StateTrace emissions;            ///< y = s⁽ⁱ⁾

    [[nodiscard]] std::size_t length() const { return emissions.length(); }
    [[nodiscard]] std::size_t dim() const { return emissions.dim(); }
    [[nodiscard]] Real emission_variance() const { return Real(1) / lambda; }

    /// Transition matrix into row k (k ≥ 1), densified in diagonal mode.
    [[nodiscard]] Matrix transition(std::size_t k) const;
    void validate() const;
};

[[nodiscard]] Lgssm build_lgssm(const StateTrace& trace, const DynamicsModel& model, Real lambda, JacobianMode mode,
                                const Execution& exec = Execution::sequential());

struct FilterResult {
    JacobianMode mode = JacobianMode::dense;
    StateTrace means;
    std::vector<Matrix> covariances;  ///< dense mode
    RowMatrix variances;              ///< diagonal mode, T×D
    std::optional<Real> log_likelihood;
    std::size_t ridge_activations = 0;
    std::size_t element_bytes = 0;    ///< storage held by the filter's per-step state

    /// Covariance at row k, densified in diagonal mode.
    [[nodiscard]] Matrix covariance(std::size_t k) const;
};

/// Predict/update recursion. Throws NumericalError if the innovation
/// covariance loses positive-definiteness.
[[nodiscard]] FilterResult kalman_filter_sequential(const Lgssm& m);

/// Five-tuple conditional-Gaussian message of the associative Kalman filter.
struct KalmanScanElement {
    Matrix A;
    Vector b;
    Matrix C;
    Vector eta;
    Matrix J;
};

/// Diagonal counterpart; every matrix is stored as its diagonal.
struct DiagKalmanScanElement {
    Vector A;
    Vector b;
    Vector C;
    Vector eta;
    Vector J;
};

[[nodiscard]] std::size_t element_dim(const KalmanScanElement& e);
[[nodiscard]] std::size_t element_dim(const DiagKalmanScanElement& e);
[[nodiscard]] std::size_t element_bytes(const KalmanScanElement& e);
[[nodiscard]] std::size_t element_bytes(const DiagKalmanScanElement& e);

/// Below this reciprocal condition estimate, I + C_i J_j gets a 1e-12·I ridge.
inline constexpr Real kRidgeRcond = Real(1e-13);
inline constexpr Real kRidge = Real(1e-12);

/// Associative combination (first = earlier block i, second = later block j).
/// Increments `ridge` when the regularization fires.
void combine_into(const KalmanScanElement& first, const KalmanScanElement& second, KalmanScanElement& out,
                  std::atomic<std::size_t>& ridge);
void combine_into(const DiagKalmanScanElement& first, const DiagKalmanScanElement& second,
                  DiagKalmanScanElement& out, std::atomic<std::size_t>& ridge);
[[nodiscard]] KalmanScanElement combine(const KalmanScanElement& first, const KalmanScanElement& second);
[[nodiscard]] DiagKalmanScanElement combine(const DiagKalmanScanElement& first, const DiagKalmanScanElement& second);

/// Filtering elements of `m` (element 0 carries the updated prior).
[[nodiscard]] std::vector<KalmanScanElement> kalman_elements(const Lgssm& m);
[[nodiscard]] std::vector<DiagKalmanScanElement> kalman_elements_diag(const Lgssm& m);

/// Filtering as an inclusive scan over Kalman elements; prefix k gives the
/// filtered mean (b) and covariance (C) of row k.
[[nodiscard]] FilterResult kalman_filter_parallel(const Lgssm& m, const Execution& exec = Execution{});

/// Rauch-Tung-Striebel pass over the sequential filter: the exact posterior mode.
[[nodiscard]] StateTrace kalman_smoother(const Lgssm& m);

/// -log p(s, y) of the LGSSM including normalizing constants.
[[nodiscard]] Real negative_log_joint(const Lgssm& m, const StateTrace& states);

/// ½‖r + J Δs‖² + λ/2 ‖Δs‖² evaluated blockwise (J uses diagonal Jacobians in diagonal mode).
[[nodiscard]] Real damped_objective(const StateTrace& trace, const DynamicsModel& model, const StateTrace& delta,
                                    Real lambda, JacobianMode mode);

enum class Inference { filter, smoother };
enum class FilterImpl { automatic, sequential, parallel };

[[nodiscard]] constexpr const char* to_string(Inference i) noexcept {
    return i == Inference::filter ? "filter" : "smoother";
}

struct StepOptions {
    Inference inference = Inference::filter;
    FilterImpl filter = FilterImpl::automatic;  ///< automatic: parallel iff exec has > 1 worker
    Execution exec{};
};

struct StepResult {
    StateTrace trace;
    std::size_t ridge_activations = 0;
    std::size_t element_bytes = 0;
};

[[nodiscard]] StepResult elk_step_detailed(const StateTrace& trace, const DynamicsModel& model, Real lambda,
                                           JacobianMode mode, const StepOptions& options = {});

/// Posterior means of build_lgssm(trace, ...): filtered by default, smoothed on request.
[[nodiscard]] StateTrace elk_step(const StateTrace& trace, const DynamicsModel& model, Real lambda, JacobianMode mode,
                                  Inference inference = Inference::filter,
                                  const Execution& exec = Execution::sequential());

struct ElkConfig {
    Real lambda = 1;
    JacobianMode mode = JacobianMode::dense;
    Inference inference = Inference::filter;
    FilterImpl filter = FilterImpl::automatic;
    std::optional<std::size_t> max_iters;  ///< unset: T
    Real tol = Real(1e-8);
    bool record_history = true;
    Execution exec{};

    void validate() const;
};

struct ElkResult {
    StateTrace trace;
    SolveReport report;
};

/// Iterates elk_step with a fixed λ until the residual max-abs is ≤ tol.
/// Never resets; a non-finite iterate ends the solve unconverged.
[[nodiscard]] ElkResult elk_solve(const StateTrace& initial, const DynamicsModel& model, const ElkConfig& config);

/// 8 log-spaced values 10^0 .. 10^7.
[[nodiscard]] std::vector<Real> default_lambda_grid();

struct SweepEntry {
    Real lambda = 0;
    SolveReport report;
};

struct SweepResult {
    std::optional<Real> best_lambda;  ///< unset when no grid point converged
    std::vector<SweepEntry> entries;
};

/// Runs elk_solve per λ; the winner minimizes iterations among converged runs,
/// ties going to the smaller λ.
[[nodiscard]] SweepResult lambda_sweep(const StateTrace& initial, const DynamicsModel& model, const ElkConfig& config,
                                       std::span<const Real> grid);

}  // namespace fpr::elk
