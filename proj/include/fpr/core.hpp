#pragma once

// Traces, the dynamics interface, residuals and the merit function.
//
// Time indexing: the documentation of the dynamics uses 1-based states
// s_1..s_T with a fixed initial state s_0. Internally everything is 0-based:
// row k of a StateTrace stores s_{k+1}, and DynamicsModel::step(k, s) is the
// map that produces row k from row k-1 (from s_0 when k == 0).

#include "fpr/parallel.hpp"
#include "fpr/types.hpp"

#include <cstddef>
#include <limits>

namespace fpr {

/// T×D array of candidate states; row k holds s_{k+1}.
class StateTrace {
public:
    StateTrace() = default;
    StateTrace(std::size_t length, std::size_t dim);
    StateTrace(std::size_t length, std::size_t dim, Real fill);
    explicit StateTrace(RowMatrix data);

    [[nodiscard]] std::size_t length() const noexcept { return static_cast<std::size_t>(data_.rows()); }
    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(data_.cols()); }

    [[nodiscard]] auto row(std::size_t k) { return data_.row(static_cast<Eigen::Index>(k)); }
    [[nodiscard]] auto row(std::size_t k) const { return data_.row(static_cast<Eigen::Index>(k)); }

    [[nodiscard]] Real& operator()(std::size_t k, std::size_t d) {
        return data_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
    }
    [[nodiscard]] Real operator()(std::size_t k, std::size_t d) const {
        return data_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
    }

    [[nodiscard]] RowMatrix& data() noexcept { return data_; }
    [[nodiscard]] const RowMatrix& data() const noexcept { return data_; }

    [[nodiscard]] bool all_finite() const { return data_.allFinite(); }

    friend bool operator==(const StateTrace& a, const StateTrace& b) {
        return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() &&
               a.data_ == b.data_;
    }

private:
    RowMatrix data_;
};

/// One-step errors r_t = s_t - f_t(s_{t-1}); same shape as the trace that produced them.
using ResidualTrace = StateTrace;

/// Markovian dynamics s_t = f_t(s_{t-1}) with explicit Jacobians.
///
/// Implementations must be immutable after construction; every method may be
/// called concurrently.
class DynamicsModel {
public:
    virtual ~DynamicsModel() = default;

    [[nodiscard]] virtual std::size_t state_dim() const = 0;

    /// Largest number of steps the model can produce (inputs / noise are finite).
    [[nodiscard]] virtual std::size_t horizon() const { return std::numeric_limits<std::size_t>::max(); }

    [[nodiscard]] virtual Vector initial_state() const = 0;

    /// f at 0-based step k: maps s_k (row k-1, or s_0) to row k.
    [[nodiscard]] virtual Vector step(std::size_t k, const Vector& s) const = 0;

    /// ∂f/∂s at step k, evaluated at s.
    [[nodiscard]] virtual Matrix jacobian(std::size_t k, const Vector& s) const = 0;

    /// Diagonal of jacobian(k, s). The default extracts it from the dense matrix;
    /// models override it to avoid the D×D allocation.
    [[nodiscard]] virtual Vector jacobian_diag(std::size_t k, const Vector& s) const {
        return jacobian(k, s).diagonal();
    }
};

/// Throws DimensionError unless `trace` is T×D with D == model.state_dim() and
/// T within the model horizon.
void check_shape(const StateTrace& trace, const DynamicsModel& model);

/// State feeding step k: s_0 for k == 0, otherwise row k-1 of the trace.
[[nodiscard]] Vector previous_state(const StateTrace& trace, const DynamicsModel& model, std::size_t k);

[[nodiscard]] ResidualTrace residual(const StateTrace& trace, const DynamicsModel& model,
                                     const Execution& exec = Execution::sequential());

/// Applies f sequentially T times starting at s_0. Throws DivergedError at the
/// first non-finite state.
[[nodiscard]] StateTrace sequential_evaluate(const DynamicsModel& model, std::size_t length);

/// ½‖r(s)‖² over all T·D entries.
[[nodiscard]] Real merit(const StateTrace& trace, const DynamicsModel& model,
                         const Execution& exec = Execution::sequential());

/// ∇merit = J(s)ᵀ r(s), evaluated blockwise:
/// grad_k = r_k - (∂f/∂s at step k+1, evaluated at s_k)ᵀ r_{k+1}, grad_{T-1} = r_{T-1}.
[[nodiscard]] StateTrace merit_gradient(const StateTrace& trace, const DynamicsModel& model,
                                        const Execution& exec = Execution::sequential());

/// Mean absolute discrepancy over all entries.
[[nodiscard]] Real mad(const StateTrace& a, const StateTrace& b);

/// Largest absolute entry (NaN if any entry is NaN, +inf if any is infinite).
[[nodiscard]] Real max_abs(const StateTrace& t);

}  // namespace fpr
