#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fpr {

#ifdef FPR_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Which Jacobian the Newton-type solvers use: the full D×D matrix or only its diagonal.
enum class JacobianMode { dense, diagonal };

[[nodiscard]] constexpr const char* to_string(JacobianMode m) noexcept {
    return m == JacobianMode::dense ? "dense" : "diagonal";
}

/// Shapes of two operands do not agree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A configuration or model parameter is outside its valid range.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An operation was called on inputs its contract excludes (e.g. a non-finite trace).
class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A numerical routine failed (loss of positive-definiteness, non-finite output, ...).
/// `index` is the 0-based time index where the failure was detected.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t index)
        : std::runtime_error(what + " (time index " + std::to_string(index) + ")"), index_(index) {}

    [[nodiscard]] std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Sequential evaluation produced a non-finite state.
class DivergedError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace fpr
