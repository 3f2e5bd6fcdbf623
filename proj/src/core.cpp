#include "fpr/core.hpp"

#include <cmath>
#include <string>

namespace fpr {

StateTrace::StateTrace(std::size_t length, std::size_t dim) : StateTrace(length, dim, Real(0)) {}

StateTrace::StateTrace(std::size_t length, std::size_t dim, Real fill) {
    if (length == 0 || dim == 0) throw DimensionError("StateTrace needs T >= 1 and D >= 1");
    data_ = RowMatrix::Constant(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(dim), fill);
}

StateTrace::StateTrace(RowMatrix data) : data_(std::move(data)) {
    if (data_.rows() == 0 || data_.cols() == 0) throw DimensionError("StateTrace needs T >= 1 and D >= 1");
}

void check_shape(const StateTrace& trace, const DynamicsModel& model) {
    if (trace.dim() != model.state_dim()) {
        throw DimensionError("trace has D=" + std::to_string(trace.dim()) + " but model has D=" +
                             std::to_string(model.state_dim()));
    }
    if (trace.length() == 0) throw DimensionError("empty trace");
    if (trace.length() > model.horizon()) {
        throw DimensionError("trace length " + std::to_string(trace.length()) + " exceeds model horizon " +
                             std::to_string(model.horizon()));
    }
}

Vector previous_state(const StateTrace& trace, const DynamicsModel& model, std::size_t k) {
    if (k == 0) return model.initial_state();
    return trace.row(k - 1).transpose();
}

ResidualTrace residual(const StateTrace& trace, const DynamicsModel& model, const Execution& exec) {
    check_shape(trace, model);
    ResidualTrace r(trace.length(), trace.dim());
    const Vector s0 = model.initial_state();
    parallel_for(trace.length(), exec, [&](std::size_t k) {
        const Vector prev = k == 0 ? s0 : Vector(trace.row(k - 1).transpose());
        r.row(k) = trace.row(k) - model.step(k, prev).transpose();
    });
    return r;
}

StateTrace sequential_evaluate(const DynamicsModel& model, std::size_t length) {
    if (length == 0) throw DimensionError("sequential_evaluate needs T >= 1");
    if (length > model.horizon()) {
        throw DimensionError("requested length " + std::to_string(length) + " exceeds model horizon " +
                             std::to_string(model.horizon()));
    }
    StateTrace out(length, model.state_dim());
    Vector s = model.initial_state();
    for (std::size_t k = 0; k < length; ++k) {
        s = model.step(k, s);
        if (!s.allFinite()) throw DivergedError("sequential evaluation produced a non-finite state", k);
        out.row(k) = s.transpose();
    }
    return out;
}

Real merit(const StateTrace& trace, const DynamicsModel& model, const Execution& exec) {
    return Real(0.5) * residual(trace, model, exec).data().squaredNorm();
}

StateTrace merit_gradient(const StateTrace& trace, const DynamicsModel& model, const Execution& exec) {
    const ResidualTrace r = residual(trace, model, exec);
    const std::size_t n = trace.length();
    StateTrace grad(n, trace.dim());
    parallel_for(n, exec, [&](std::size_t k) {
        grad.row(k) = r.row(k);
        if (k + 1 < n) {
            const Matrix jac = model.jacobian(k + 1, trace.row(k).transpose());
            grad.row(k) -= (jac.transpose() * r.row(k + 1).transpose()).transpose();
        }
    });
    return grad;
}

Real mad(const StateTrace& a, const StateTrace& b) {
    if (a.length() != b.length() || a.dim() != b.dim()) throw DimensionError("mad: shape mismatch");
    return (a.data() - b.data()).cwiseAbs().mean();
}

Real max_abs(const StateTrace& t) {
    Real m = 0;
    for (Eigen::Index i = 0; i < t.data().size(); ++i) {
        const Real v = std::abs(t.data().data()[i]);
        if (std::isnan(v)) return v;
        if (v > m) m = v;
    }
    return m;
}

}  // namespace fpr
