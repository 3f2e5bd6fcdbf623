#include "fpr/deer.hpp"

#include <chrono>
#include <cmath>
#include <string>

namespace fpr::deer {

namespace {

void require_finite(const StateTrace& trace) {
    if (!trace.all_finite()) throw PreconditionError("trace contains non-finite entries; reset before stepping");
}

template <class Element>
StateTrace apply_scan(const StateTrace& trace, const std::vector<Element>& elements, const Execution& exec,
                      scan::ScanStats* stats) {
    const auto mode = exec.is_parallel() ? scan::ScanMode::parallel : scan::ScanMode::sequential;
    const std::vector<Element> prefix = scan::inclusive_scan(std::span<const Element>(elements), mode, exec, stats);
    // Element 0 has a zero transition, so every prefix maps any carrier to its b part.
    StateTrace next = trace;
    for (std::size_t k = 0; k < prefix.size(); ++k) next.row(k) += prefix[k].b.transpose();
    return next;
}

Real residual_norm(const ResidualTrace& r) { return max_abs(r); }

}  // namespace

ElementSequence build_elements(const StateTrace& trace, const ResidualTrace& r, const DynamicsModel& model,
                               JacobianMode mode, const Execution& exec) {
    check_shape(trace, model);
    require_finite(trace);
    const std::size_t n = trace.length();
    const auto d = static_cast<Eigen::Index>(trace.dim());

    if (mode == JacobianMode::dense) {
        std::vector<scan::DenseAffineElement> elements(n);
        parallel_for(n, exec, [&](std::size_t k) {
            auto& e = elements[k];
            e.A = k == 0 ? Matrix::Zero(d, d) : model.jacobian(k, trace.row(k - 1).transpose());
            e.b = -r.row(k).transpose();
        });
        return elements;
    }
    std::vector<scan::DiagAffineElement> elements(n);
    parallel_for(n, exec, [&](std::size_t k) {
        auto& e = elements[k];
        e.a = k == 0 ? Vector::Zero(d) : model.jacobian_diag(k, trace.row(k - 1).transpose());
        e.b = -r.row(k).transpose();
    });
    return elements;
}

ElementSequence build_elements(const StateTrace& trace, const DynamicsModel& model, JacobianMode mode,
                               const Execution& exec) {
    check_shape(trace, model);
    require_finite(trace);
    return build_elements(trace, residual(trace, model, exec), model, mode, exec);
}

namespace {

StateTrace step_with_residual(const StateTrace& trace, const ResidualTrace& r, const DynamicsModel& model,
                              JacobianMode mode, const Execution& exec, scan::ScanStats* stats) {
    const ElementSequence elements = build_elements(trace, r, model, mode, exec);
    return std::visit([&](const auto& elems) { return apply_scan(trace, elems, exec, stats); }, elements);
}

}  // namespace

StateTrace deer_step(const StateTrace& trace, const DynamicsModel& model, JacobianMode mode, const Execution& exec,
                     scan::ScanStats* stats) {
    return step_with_residual(trace, residual(trace, model, exec), model, mode, exec, stats);
}

void DeerConfig::validate() const {
    if (!(tol > 0)) throw ParameterError("DEER tol must be positive");
    if (max_iters && *max_iters < 1) throw ParameterError("DEER max_iters must be >= 1");
    if (!std::isfinite(reset_value)) throw ParameterError("DEER reset_value must be finite");
    if (exec.workers < 1) throw ParameterError("workers must be >= 1");
}

std::optional<std::size_t> reset_nonfinite(StateTrace& trace, Real value, ResetPolicy policy) {
    std::optional<std::size_t> first;
    for (std::size_t k = 0; k < trace.length(); ++k) {
        if (!trace.row(k).allFinite()) {
            first = k;
            break;
        }
    }
    if (!first) return first;
    for (std::size_t k = *first; k < trace.length(); ++k) {
        auto row = trace.row(k);
        if (policy == ResetPolicy::suffix) {
            row.setConstant(value);
            continue;
        }
        for (Eigen::Index d = 0; d < row.size(); ++d)
            if (!std::isfinite(row(d))) row(d) = value;
    }
    return first;
}

std::size_t converged_prefix_length(const StateTrace& trace, const DynamicsModel& model, Real tol) {
    const ResidualTrace r = residual(trace, model);
    std::size_t k = 0;
    while (k < r.length() && r.row(k).cwiseAbs().maxCoeff() <= tol) ++k;
    return k;
}

DeerResult deer_solve(const StateTrace& initial, const DynamicsModel& model, const DeerConfig& config) {
    config.validate();
    check_shape(initial, model);
    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();

    const std::size_t n = initial.length();
    std::size_t limit = config.max_iters.value_or(n);

    DeerResult out{initial, SolveReport{}};
    SolveReport& rep = out.report;
    StateTrace& s = out.trace;

    if (auto bad = reset_nonfinite(s, config.reset_value, config.reset_policy)) {
        rep.reset_events.push_back({0, *bad});
        if (!config.max_iters) limit = 10 * n;
    }
    ResidualTrace r = residual(s, model, config.exec);
    Real norm = residual_norm(r);

    while (!(norm <= config.tol) && rep.iterations < limit) {
        const auto iter_start = Clock::now();
        scan::ScanStats stats;
        StateTrace next = step_with_residual(s, r, model, config.mode, config.exec, &stats);
        rep.peak_element_bytes = std::max(rep.peak_element_bytes, stats.peak_bytes());
        ++rep.iterations;

        if (!next.all_finite()) {
            ++rep.nonfinite_iterations;
            const auto bad = reset_nonfinite(next, config.reset_value, config.reset_policy);
            rep.reset_events.push_back({rep.iterations, *bad});
            if (!config.max_iters) limit = 10 * n;
        }
        r = residual(next, model, config.exec);
        norm = residual_norm(r);
        if (config.record_history) {
            rep.residual_norm_history.push_back(norm);
            rep.merit_history.push_back(Real(0.5) * r.data().squaredNorm());
            rep.mad_history.push_back(mad(next, s));
        }
        s = std::move(next);
        rep.wall_time_per_iteration.push_back(std::chrono::duration<double>(Clock::now() - iter_start).count());
    }

    rep.converged = norm <= config.tol;
    rep.final_residual = norm;
    rep.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return out;
}

}  // namespace fpr::deer
