#pragma once

// Small models and random generators shared by the test binaries.

#include "fpr/core.hpp"
#include "fpr/models.hpp"

#include <cmath>
#include <random>

namespace fpr::testing {

/// f_k(s) = a ⊙ s, the hand-checkable scalar-gain model.
class ScaleModel final : public DynamicsModel {
public:
    ScaleModel(Vector a, Vector s0) : a_(std::move(a)), s0_(std::move(s0)) {}
    ScaleModel(Real a, Real s0) : a_(Vector::Constant(1, a)), s0_(Vector::Constant(1, s0)) {}

    std::size_t state_dim() const override { return static_cast<std::size_t>(a_.size()); }
    Vector initial_state() const override { return s0_; }
    Vector step(std::size_t, const Vector& s) const override { return a_.cwiseProduct(s); }
    Matrix jacobian(std::size_t, const Vector&) const override { return a_.asDiagonal(); }

private:
    Vector a_;
    Vector s0_;
};

inline StateTrace trace_of(std::initializer_list<std::initializer_list<Real>> rows) {
    const auto d = static_cast<Eigen::Index>(rows.begin()->size());
    RowMatrix m(static_cast<Eigen::Index>(rows.size()), d);
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        Eigen::Index j = 0;
        for (Real v : row) m(i, j++) = v;
        ++i;
    }
    return StateTrace(m);
}

inline StateTrace random_trace(std::size_t T, std::size_t D, std::mt19937_64& rng, Real scale = 1) {
    std::normal_distribution<Real> n(0, scale);
    StateTrace t(T, D);
    for (std::size_t k = 0; k < T; ++k)
        for (std::size_t d = 0; d < D; ++d) t(k, d) = n(rng);
    return t;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, Real scale = 1) {
    std::normal_distribution<Real> n(0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline Vector random_vector(Eigen::Index n, std::mt19937_64& rng, Real scale = 1) {
    return random_matrix(n, 1, rng, scale);
}

inline std::unique_ptr<models::BundledModel> random_gru(std::size_t D, std::size_t T, std::uint64_t seed) {
    models::ModelSpec spec;
    spec.kind = "gru";
    spec.state_dim = D;
    spec.horizon = T;
    spec.seed = seed;
    return models::init_random(spec);
}

/// max |a - b| / max(1, max |b|).
inline Real rel_error(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max<Real>(1, b.cwiseAbs().maxCoeff());
}

}  // namespace fpr::testing
