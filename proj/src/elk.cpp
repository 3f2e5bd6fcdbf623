#include "fpr/elk.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <chrono>
#include <cmath>
#include <numbers>
#include <string>

namespace fpr::elk {

namespace {

Eigen::Index idx(std::size_t k) { return static_cast<Eigen::Index>(k); }

void symmetrize(Matrix& m) { m = Real(0.5) * (m + m.transpose()).eval(); }

}  // namespace

// ---------------------------------------------------------------------------
// LGSSM

Matrix Lgssm::transition(std::size_t k) const {
    if (mode == JacobianMode::dense) return dynamics[k - 1];
    return dynamics_diag.row(idx(k - 1)).transpose().asDiagonal();
}

void Lgssm::validate() const {
    if (!(lambda > 0) || !std::isfinite(lambda)) throw ParameterError("lambda must be positive and finite");
    const std::size_t n = length();
    const auto d = idx(dim());
    if (initial_mean.size() != d) throw DimensionError("LGSSM initial mean must have length D");
    if (offsets.rows() != idx(n - 1) || (n > 1 && offsets.cols() != d)) {
        throw DimensionError("LGSSM needs T-1 dynamics offsets");
    }
    if (mode == JacobianMode::dense) {
        if (dynamics.size() != n - 1) throw DimensionError("LGSSM needs T-1 dynamics matrices");
        for (const Matrix& F : dynamics)
            if (F.rows() != d || F.cols() != d) throw DimensionError("LGSSM dynamics must be D×D");
    } else if (dynamics_diag.rows() != idx(n - 1) || (n > 1 && dynamics_diag.cols() != d)) {
        throw DimensionError("LGSSM needs T-1 diagonal dynamics rows");
    }
}

Lgssm build_lgssm(const StateTrace& trace, const DynamicsModel& model, Real lambda, JacobianMode mode,
                  const Execution& exec) {
    check_shape(trace, model);
    if (!(lambda > 0) || !std::isfinite(lambda)) throw ParameterError("lambda must be positive and finite");
    if (!trace.all_finite()) throw PreconditionError("ELK needs a finite trace");

    const std::size_t n = trace.length();
    const auto d = idx(trace.dim());
    Lgssm m;
    m.mode = mode;
    m.lambda = lambda;
    m.initial_mean = model.step(0, model.initial_state());
    m.emissions = trace;
    m.offsets = RowMatrix(idx(n - 1), d);
    if (mode == JacobianMode::dense) {
        m.dynamics.resize(n - 1);
    } else {
        m.dynamics_diag = RowMatrix(idx(n - 1), d);
    }
    parallel_for(n - 1, exec, [&](std::size_t j) {
        const std::size_t k = j + 1;
        const Vector prev = trace.row(k - 1).transpose();
        const Vector fx = model.step(k, prev);
        if (mode == JacobianMode::dense) {
            m.dynamics[j] = model.jacobian(k, prev);
            m.offsets.row(idx(j)) = (fx - m.dynamics[j] * prev).transpose();
        } else {
            const Vector a = model.jacobian_diag(k, prev);
            m.dynamics_diag.row(idx(j)) = a.transpose();
            m.offsets.row(idx(j)) = (fx - a.cwiseProduct(prev)).transpose();
        }
    });
    return m;
}

Matrix FilterResult::covariance(std::size_t k) const {
    if (mode == JacobianMode::dense) return covariances[k];
    return variances.row(idx(k)).transpose().asDiagonal();
}

// ---------------------------------------------------------------------------
// Sequential filter

namespace {

FilterResult filter_dense(const Lgssm& m) {
    const std::size_t n = m.length();
    const auto d = idx(m.dim());
    const Real r = m.emission_variance();
    const Matrix eye = Matrix::Identity(d, d);

    FilterResult out;
    out.mode = JacobianMode::dense;
    out.means = StateTrace(n, m.dim());
    out.covariances.resize(n);
    Real loglik = 0;

    Vector mean = m.initial_mean;
    Matrix cov = eye;
    for (std::size_t k = 0; k < n; ++k) {
        if (k > 0) {
            const Matrix& F = m.dynamics[k - 1];
            mean = F * mean + m.offsets.row(idx(k - 1)).transpose();
            cov = F * cov * F.transpose() + eye;
        }
        Matrix S = cov;
        S.diagonal().array() += r;
        Eigen::LLT<Matrix> llt(S);
        if (llt.info() != Eigen::Success) throw NumericalError("innovation covariance is not positive definite", k);
        const Vector innovation = m.emissions.row(k).transpose() - mean;
        const Vector weighted = llt.solve(innovation);
        const Real logdet = 2 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        loglik -= Real(0.5) * (innovation.dot(weighted) + logdet + Real(d) * std::log(2 * std::numbers::pi_v<Real>));

        mean += cov * weighted;
        // P⁺ = P⁻ - P⁻ S⁻¹ P⁻ = r S⁻¹ P⁻
        cov = r * llt.solve(cov);
        symmetrize(cov);
        out.means.row(k) = mean.transpose();
        out.covariances[k] = cov;
    }
    out.log_likelihood = loglik;
    out.element_bytes = n * static_cast<std::size_t>(d * d + d) * sizeof(Real);
    return out;
}

FilterResult filter_diag(const Lgssm& m) {
    const std::size_t n = m.length();
    const auto d = idx(m.dim());
    const Real r = m.emission_variance();

    FilterResult out;
    out.mode = JacobianMode::diagonal;
    out.means = StateTrace(n, m.dim());
    out.variances = RowMatrix(idx(n), d);
    Real loglik = 0;

    Vector mean = m.initial_mean;
    Vector var = Vector::Ones(d);
    for (std::size_t k = 0; k < n; ++k) {
        if (k > 0) {
            const auto a = m.dynamics_diag.row(idx(k - 1)).transpose();
            mean = a.cwiseProduct(mean) + m.offsets.row(idx(k - 1)).transpose();
            var = a.cwiseAbs2().cwiseProduct(var) + Vector::Ones(d);
        }
        const Vector S = var.array() + r;
        if (!(S.array() > 0).all()) throw NumericalError("innovation variance is not positive", k);
        const Vector innovation = m.emissions.row(k).transpose() - mean;
        loglik -= Real(0.5) * ((innovation.array().square() / S.array()).sum() + S.array().log().sum() +
                               Real(d) * std::log(2 * std::numbers::pi_v<Real>));
        mean += (var.array() / S.array() * innovation.array()).matrix();
        var = (r * var.array() / S.array()).matrix();
        out.means.row(k) = mean.transpose();
        out.variances.row(idx(k)) = var.transpose();
    }
    out.log_likelihood = loglik;
    out.element_bytes = n * static_cast<std::size_t>(2 * d) * sizeof(Real);
    return out;
}

}  // namespace

FilterResult kalman_filter_sequential(const Lgssm& m) {
    m.validate();
    return m.mode == JacobianMode::dense ? filter_dense(m) : filter_diag(m);
}

// ---------------------------------------------------------------------------
// Parallel filter

std::size_t element_dim(const KalmanScanElement& e) { return static_cast<std::size_t>(e.b.size()); }
std::size_t element_dim(const DiagKalmanScanElement& e) { return static_cast<std::size_t>(e.b.size()); }

std::size_t element_bytes(const KalmanScanElement& e) {
    return static_cast<std::size_t>(e.A.size() + e.b.size() + e.C.size() + e.eta.size() + e.J.size()) * sizeof(Real);
}

std::size_t element_bytes(const DiagKalmanScanElement& e) {
    return static_cast<std::size_t>(e.A.size() + e.b.size() + e.C.size() + e.eta.size() + e.J.size()) * sizeof(Real);
}

void combine_into(const KalmanScanElement& first, const KalmanScanElement& second, KalmanScanElement& out,
                  std::atomic<std::size_t>& ridge) {
    const auto& [Ai, bi, Ci, etai, Ji] = first;
    const auto& [Aj, bj, Cj, etaj, Jj] = second;
    const Eigen::Index d = bi.size();

    Matrix M = Ci * Jj;
    M.diagonal().array() += 1;
    Eigen::PartialPivLU<Matrix> lu(M);
    if (!(lu.rcond() >= kRidgeRcond)) {
        M.diagonal().array() += kRidge;
        lu.compute(M);
        ridge.fetch_add(1, std::memory_order_relaxed);
    }
    const Matrix Minv = lu.inverse();          // (I + C_i J_j)⁻¹
    const Matrix AjM = Aj * Minv;
    const Matrix AitMt = Ai.transpose() * Minv.transpose();  // A_iᵀ (I + J_j C_i)⁻¹

    out.A.noalias() = AjM * Ai;
    out.b.noalias() = AjM * (bi + Ci * etaj);
    out.b += bj;
    out.C.noalias() = AjM * Ci * Aj.transpose();
    out.C += Cj;
    symmetrize(out.C);
    out.eta.noalias() = AitMt * (etaj - Jj * bi);
    out.eta += etai;
    out.J.noalias() = AitMt * Jj * Ai;
    out.J += Ji;
    symmetrize(out.J);
    (void)d;
}

void combine_into(const DiagKalmanScanElement& first, const DiagKalmanScanElement& second,
                  DiagKalmanScanElement& out, std::atomic<std::size_t>& ridge) {
    const auto& [Ai, bi, Ci, etai, Ji] = first;
    const auto& [Aj, bj, Cj, etaj, Jj] = second;
    Vector M = (Ci.array() * Jj.array() + 1).matrix();
    for (Eigen::Index i = 0; i < M.size(); ++i) {
        if (!(std::abs(M(i)) >= kRidgeRcond)) {
            M(i) += kRidge;
            ridge.fetch_add(1, std::memory_order_relaxed);
        }
    }
    const auto inv = M.array().inverse();
    out.A = (Aj.array() * inv * Ai.array()).matrix();
    out.b = (Aj.array() * inv * (bi.array() + Ci.array() * etaj.array()) + bj.array()).matrix();
    out.C = (Aj.array().square() * inv * Ci.array() + Cj.array()).matrix();
    out.eta = (Ai.array() * inv * (etaj.array() - Jj.array() * bi.array()) + etai.array()).matrix();
    out.J = (Ai.array().square() * inv * Jj.array() + Ji.array()).matrix();
}

KalmanScanElement combine(const KalmanScanElement& first, const KalmanScanElement& second) {
    if (first.b.size() != second.b.size()) throw DimensionError("Kalman combine: dimension mismatch");
    KalmanScanElement out = first;
    std::atomic<std::size_t> ridge{0};
    combine_into(first, second, out, ridge);
    return out;
}

DiagKalmanScanElement combine(const DiagKalmanScanElement& first, const DiagKalmanScanElement& second) {
    if (first.b.size() != second.b.size()) throw DimensionError("Kalman combine: dimension mismatch");
    DiagKalmanScanElement out = first;
    std::atomic<std::size_t> ridge{0};
    combine_into(first, second, out, ridge);
    return out;
}

// With H = Q = I and R = λ⁻¹ I the gain is K = λ/(1+λ) I, so
//   A = F/(1+λ), b = c + λ/(1+λ)(y - c), C = I/(1+λ),
//   η = λ/(1+λ) Fᵀ(y - c), J = λ/(1+λ) FᵀF.
// Element 0 is the update of the prior N(m_1, I) with y_1 and has A = η = J = 0.
std::vector<KalmanScanElement> kalman_elements(const Lgssm& m) {
    m.validate();
    if (m.mode != JacobianMode::dense) throw ParameterError("kalman_elements needs a dense LGSSM");
    const std::size_t n = m.length();
    const auto d = idx(m.dim());
    const Real gain = m.lambda / (1 + m.lambda);
    const Real keep = 1 / (1 + m.lambda);

    std::vector<KalmanScanElement> out(n);
    {
        auto& e = out[0];
        e.A = Matrix::Zero(d, d);
        e.b = m.initial_mean + gain * (m.emissions.row(0).transpose() - m.initial_mean);
        e.C = keep * Matrix::Identity(d, d);
        e.eta = Vector::Zero(d);
        e.J = Matrix::Zero(d, d);
    }
    for (std::size_t k = 1; k < n; ++k) {
        const Matrix& F = m.dynamics[k - 1];
        const Vector c = m.offsets.row(idx(k - 1)).transpose();
        const Vector innov = m.emissions.row(k).transpose() - c;
        auto& e = out[k];
        e.A = keep * F;
        e.b = c + gain * innov;
        e.C = keep * Matrix::Identity(d, d);
        e.eta = gain * (F.transpose() * innov);
        e.J = gain * (F.transpose() * F);
    }
    return out;
}

std::vector<DiagKalmanScanElement> kalman_elements_diag(const Lgssm& m) {
    m.validate();
    if (m.mode != JacobianMode::diagonal) throw ParameterError("kalman_elements_diag needs a diagonal LGSSM");
    const std::size_t n = m.length();
    const auto d = idx(m.dim());
    const Real gain = m.lambda / (1 + m.lambda);
    const Real keep = 1 / (1 + m.lambda);

    std::vector<DiagKalmanScanElement> out(n);
    {
        auto& e = out[0];
        e.A = Vector::Zero(d);
        e.b = m.initial_mean + gain * (m.emissions.row(0).transpose() - m.initial_mean);
        e.C = Vector::Constant(d, keep);
        e.eta = Vector::Zero(d);
        e.J = Vector::Zero(d);
    }
    for (std::size_t k = 1; k < n; ++k) {
        const Vector a = m.dynamics_diag.row(idx(k - 1)).transpose();
        const Vector c = m.offsets.row(idx(k - 1)).transpose();
        const Vector innov = m.emissions.row(k).transpose() - c;
        auto& e = out[k];
        e.A = keep * a;
        e.b = c + gain * innov;
        e.C = Vector::Constant(d, keep);
        e.eta = gain * a.cwiseProduct(innov);
        e.J = gain * a.cwiseAbs2();
    }
    return out;
}

FilterResult kalman_filter_parallel(const Lgssm& m, const Execution& exec) {
    m.validate();
    const std::size_t n = m.length();
    std::atomic<std::size_t> ridge{0};
    FilterResult out;
    out.mode = m.mode;
    out.means = StateTrace(n, m.dim());
    scan::ScanStats stats;

    if (m.mode == JacobianMode::dense) {
        const auto elems = kalman_elements(m);
        const auto prefix = scan::inclusive_scan(
            std::span<const KalmanScanElement>(elems),
            [&ridge](const KalmanScanElement& a, const KalmanScanElement& b, KalmanScanElement& o) {
                combine_into(a, b, o, ridge);
            },
            scan::ScanMode::parallel, exec, &stats);
        out.covariances.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            out.means.row(k) = prefix[k].b.transpose();
            out.covariances[k] = prefix[k].C;
        }
    } else {
        const auto elems = kalman_elements_diag(m);
        const auto prefix = scan::inclusive_scan(
            std::span<const DiagKalmanScanElement>(elems),
            [&ridge](const DiagKalmanScanElement& a, const DiagKalmanScanElement& b, DiagKalmanScanElement& o) {
                combine_into(a, b, o, ridge);
            },
            scan::ScanMode::parallel, exec, &stats);
        out.variances = RowMatrix(idx(n), idx(m.dim()));
        for (std::size_t k = 0; k < n; ++k) {
            out.means.row(k) = prefix[k].b.transpose();
            out.variances.row(idx(k)) = prefix[k].C.transpose();
        }
    }
    out.ridge_activations = ridge.load();
    out.element_bytes = stats.peak_bytes();
    return out;
}

// ---------------------------------------------------------------------------
// Smoother

StateTrace kalman_smoother(const Lgssm& m) {
    const FilterResult f = kalman_filter_sequential(m);
    const std::size_t n = m.length();
    StateTrace smoothed = f.means;
    if (n == 1) return smoothed;

    for (std::size_t k = n - 1; k-- > 0;) {
        const Vector mean = f.means.row(k).transpose();
        const Vector c = m.offsets.row(idx(k)).transpose();
        const Vector next = smoothed.row(k + 1).transpose();
        if (m.mode == JacobianMode::dense) {
            const Matrix& F = m.dynamics[k];
            const Matrix& P = f.covariances[k];
            Matrix pred_cov = F * P * F.transpose();
            pred_cov.diagonal().array() += 1;
            const Vector pred_mean = F * mean + c;
            // G = P Fᵀ (P⁻)⁻¹ and G v = P Fᵀ (P⁻)⁻¹ v
            const Eigen::LLT<Matrix> llt(pred_cov);
            if (llt.info() != Eigen::Success) throw NumericalError("smoother predicted covariance is not SPD", k + 1);
            smoothed.row(k) = (mean + P * (F.transpose() * llt.solve(next - pred_mean))).transpose();
        } else {
            const Vector a = m.dynamics_diag.row(idx(k)).transpose();
            const Vector P = f.variances.row(idx(k)).transpose();
            const Vector pred_var = (a.array().square() * P.array() + 1).matrix();
            const Vector pred_mean = a.cwiseProduct(mean) + c;
            smoothed.row(k) =
                (mean.array() + P.array() * a.array() / pred_var.array() * (next - pred_mean).array()).transpose();
        }
    }
    return smoothed;
}

// ---------------------------------------------------------------------------
// Objective evaluations

namespace {

Real log_normal_isotropic(const Vector& x, const Vector& mean, Real variance) {
    const Real d = static_cast<Real>(x.size());
    return -Real(0.5) * (d * std::log(2 * std::numbers::pi_v<Real> * variance) + (x - mean).squaredNorm() / variance);
}

}  // namespace

Real negative_log_joint(const Lgssm& m, const StateTrace& states) {
    m.validate();
    if (states.length() != m.length() || states.dim() != m.dim()) throw DimensionError("state shape mismatch");
    Real logp = log_normal_isotropic(states.row(0).transpose(), m.initial_mean, 1);
    for (std::size_t k = 0; k < m.length(); ++k) {
        logp += log_normal_isotropic(m.emissions.row(k).transpose(), states.row(k).transpose(), m.emission_variance());
    }
    for (std::size_t k = 1; k < m.length(); ++k) {
        const Vector prev = states.row(k - 1).transpose();
        const Vector mean = m.transition(k) * prev + m.offsets.row(idx(k - 1)).transpose();
        logp += log_normal_isotropic(states.row(k).transpose(), mean, 1);
    }
    return -logp;
}

Real damped_objective(const StateTrace& trace, const DynamicsModel& model, const StateTrace& delta, Real lambda,
                      JacobianMode mode) {
    check_shape(trace, model);
    if (delta.length() != trace.length() || delta.dim() != trace.dim()) throw DimensionError("delta shape mismatch");
    const ResidualTrace r = residual(trace, model);
    Real linear = 0;
    for (std::size_t k = 0; k < trace.length(); ++k) {
        Vector row = r.row(k).transpose() + delta.row(k).transpose();
        if (k > 0) {
            const Vector prev = trace.row(k - 1).transpose();
            const Vector dprev = delta.row(k - 1).transpose();
            if (mode == JacobianMode::dense) {
                row -= model.jacobian(k, prev) * dprev;
            } else {
                row -= model.jacobian_diag(k, prev).cwiseProduct(dprev);
            }
        }
        linear += row.squaredNorm();
    }
    return Real(0.5) * linear + Real(0.5) * lambda * delta.data().squaredNorm();
}

// ---------------------------------------------------------------------------
// Steps and solver

StepResult elk_step_detailed(const StateTrace& trace, const DynamicsModel& model, Real lambda, JacobianMode mode,
                             const StepOptions& options) {
    const Lgssm m = build_lgssm(trace, model, lambda, mode, options.exec);
    if (options.inference == Inference::smoother) {
        const std::size_t per_row = mode == JacobianMode::dense ? m.dim() * m.dim() + m.dim() : 2 * m.dim();
        return {kalman_smoother(m), 0, m.length() * per_row * sizeof(Real)};
    }
    const bool parallel = options.filter == FilterImpl::parallel ||
                          (options.filter == FilterImpl::automatic && options.exec.is_parallel());
    FilterResult f = parallel ? kalman_filter_parallel(m, options.exec) : kalman_filter_sequential(m);
    return {std::move(f.means), f.ridge_activations, f.element_bytes};
}

StateTrace elk_step(const StateTrace& trace, const DynamicsModel& model, Real lambda, JacobianMode mode,
                    Inference inference, const Execution& exec) {
    return elk_step_detailed(trace, model, lambda, mode, StepOptions{inference, FilterImpl::automatic, exec}).trace;
}

void ElkConfig::validate() const {
    if (!(lambda > 0) || !std::isfinite(lambda)) throw ParameterError("ELK lambda must be positive and finite");
    if (!(tol > 0)) throw ParameterError("ELK tol must be positive");
    if (max_iters && *max_iters < 1) throw ParameterError("ELK max_iters must be >= 1");
    if (exec.workers < 1) throw ParameterError("workers must be >= 1");
}

ElkResult elk_solve(const StateTrace& initial, const DynamicsModel& model, const ElkConfig& config) {
    config.validate();
    check_shape(initial, model);
    if (!initial.all_finite()) throw PreconditionError("ELK needs a finite initial trace");
    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();

    const std::size_t limit = config.max_iters.value_or(initial.length());
    ElkResult out{initial, SolveReport{}};
    SolveReport& rep = out.report;
    StateTrace& s = out.trace;
    const StepOptions options{config.inference, config.filter, config.exec};

    ResidualTrace r = residual(s, model, config.exec);
    Real norm = max_abs(r);
    while (!(norm <= config.tol) && rep.iterations < limit) {
        const auto iter_start = Clock::now();
        StepResult step = elk_step_detailed(s, model, config.lambda, config.mode, options);
        ++rep.iterations;
        rep.ridge_activations += step.ridge_activations;
        rep.peak_element_bytes = std::max(rep.peak_element_bytes, step.element_bytes);

        if (!step.trace.all_finite()) {
            ++rep.nonfinite_iterations;
            rep.wall_time_per_iteration.push_back(std::chrono::duration<double>(Clock::now() - iter_start).count());
            norm = std::numeric_limits<Real>::infinity();
            break;
        }
        r = residual(step.trace, model, config.exec);
        norm = max_abs(r);
        if (config.record_history) {
            rep.residual_norm_history.push_back(norm);
            rep.merit_history.push_back(Real(0.5) * r.data().squaredNorm());
            rep.mad_history.push_back(mad(step.trace, s));
        }
        s = std::move(step.trace);
        rep.wall_time_per_iteration.push_back(std::chrono::duration<double>(Clock::now() - iter_start).count());
    }

    rep.converged = norm <= config.tol;
    rep.final_residual = norm;
    rep.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return out;
}

std::vector<Real> default_lambda_grid() {
    std::vector<Real> grid;
    for (int e = 0; e <= 7; ++e) grid.push_back(std::pow(Real(10), Real(e)));
    return grid;
}

SweepResult lambda_sweep(const StateTrace& initial, const DynamicsModel& model, const ElkConfig& config,
                         std::span<const Real> grid) {
    if (grid.empty()) throw ParameterError("lambda grid must not be empty");
    SweepResult out;
    std::optional<std::size_t> best_iters;
    for (const Real lambda : grid) {
        ElkConfig c = config;
        c.lambda = lambda;
        ElkResult res = elk_solve(initial, model, c);
        if (res.report.converged) {
            const std::size_t it = res.report.iterations;
            if (!best_iters || it < *best_iters || (it == *best_iters && lambda < *out.best_lambda)) {
                best_iters = it;
                out.best_lambda = lambda;
            }
        }
        out.entries.push_back({lambda, std::move(res.report)});
    }
    return out;
}

}  // namespace fpr::elk
