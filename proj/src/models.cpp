#include "fpr/models.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <string>

namespace fpr::models {

namespace {

Real sigmoid(Real a) {
    if (a >= 0) return Real(1) / (Real(1) + std::exp(-a));
    const Real e = std::exp(a);
    return e / (Real(1) + e);
}

Real softplus(Real a) { return std::log1p(std::exp(-std::abs(a))) + std::max(a, Real(0)); }

Real inverse_softplus(Real y) { return y > 20 ? y : std::log(std::expm1(y)); }

Vector sigmoid(const Vector& a) { return a.unaryExpr([](Real v) { return sigmoid(v); }); }

bool finite(const Matrix& m) { return m.allFinite(); }

void require(bool ok, const std::string& what) {
    if (!ok) throw ParameterError(what);
}

Matrix uniform_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, Real bound) {
    std::uniform_real_distribution<Real> dist(-bound, bound);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
    return m;
}

Matrix normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, Real stddev) {
    std::normal_distribution<Real> dist(0, stddev);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
    return m;
}

Vector normal_vector(std::mt19937_64& rng, std::size_t n, Real stddev) {
    return normal_matrix(rng, n, 1, stddev).col(0);
}

RowMatrix normal_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols, Real stddev) {
    return normal_matrix(rng, rows, cols, stddev);
}

Vector input_row(const RowMatrix& inputs, std::size_t k) {
    return inputs.row(static_cast<Eigen::Index>(k)).transpose();
}

}  // namespace

// ---------------------------------------------------------------------------
// GRU

void GruParams::validate() const {
    const auto d = U_z.rows();
    const auto i = W_z.cols();
    require(d > 0, "GRU hidden size must be positive");
    for (const Matrix* u : {&U_z, &U_r, &U_h}) require(u->rows() == d && u->cols() == d, "GRU U_* must be D×D");
    for (const Matrix* w : {&W_z, &W_r, &W_h}) require(w->rows() == d && w->cols() == i, "GRU W_* must be D×I");
    for (const Vector* b : {&b_z, &b_r, &b_h}) require(b->size() == d, "GRU biases must have length D");
    require(inputs.cols() == i, "GRU inputs must have I columns");
    for (const Matrix* m : {&W_z, &W_r, &W_h, &U_z, &U_r, &U_h}) require(finite(*m), "GRU weights must be finite");
    require(b_z.allFinite() && b_r.allFinite() && b_h.allFinite() && inputs.allFinite(),
            "GRU biases and inputs must be finite");
}

GruGates gru_cell(const GruParams& p, const Vector& x, const Vector& h) {
    GruGates g;
    g.z = sigmoid(p.W_z * x + p.U_z * h + p.b_z);
    g.r = sigmoid(p.W_r * x + p.U_r * h + p.b_r);
    g.candidate = (p.W_h * x + p.U_h * g.r.cwiseProduct(h) + p.b_h).array().tanh().matrix();
    g.out = (Vector::Ones(h.size()) - g.z).cwiseProduct(h) + g.z.cwiseProduct(g.candidate);
    return g;
}

Matrix gru_cell_jacobian(const GruParams& p, const Vector& x, const Vector& h) {
    const GruGates g = gru_cell(p, x, h);
    const Vector dz = g.z.cwiseProduct(Vector::Ones(h.size()) - g.z);
    const Vector dr = g.r.cwiseProduct(Vector::Ones(h.size()) - g.r);
    const Vector dc = Vector::Ones(h.size()) - g.candidate.cwiseAbs2();

    const Matrix jz = dz.asDiagonal() * p.U_z;
    const Matrix jr = dr.asDiagonal() * p.U_r;
    // ∂(r ⊙ h)/∂h = diag(r) + diag(h) Jr
    Matrix jrh = h.asDiagonal() * jr;
    jrh.diagonal() += g.r;
    const Matrix jc = dc.asDiagonal() * (p.U_h * jrh);

    Matrix jac = (g.candidate - h).asDiagonal() * jz + g.z.asDiagonal() * jc;
    jac.diagonal() += Vector::Ones(h.size()) - g.z;
    return jac;
}

Vector gru_cell_jacobian_diag(const GruParams& p, const Vector& x, const Vector& h) {
    const GruGates g = gru_cell(p, x, h);
    const Eigen::Index n = h.size();
    // h_j r_j (1 - r_j), shared by every diagonal entry
    const Vector hdr = h.cwiseProduct(g.r).cwiseProduct(Vector::Ones(n) - g.r);
    Vector diag(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Real dz = g.z(i) * (1 - g.z(i));
        const Real dc = 1 - g.candidate(i) * g.candidate(i);
        Real inner = p.U_h(i, i) * g.r(i);
        for (Eigen::Index j = 0; j < n; ++j) inner += p.U_h(i, j) * hdr(j) * p.U_r(j, i);
        diag(i) = (1 - g.z(i)) + (g.candidate(i) - h(i)) * dz * p.U_z(i, i) + g.z(i) * dc * inner;
    }
    return diag;
}

Matrix gru_cell_input_jacobian(const GruParams& p, const Vector& x, const Vector& h) {
    const GruGates g = gru_cell(p, x, h);
    const Vector dz = g.z.cwiseProduct(Vector::Ones(h.size()) - g.z);
    const Vector dr = g.r.cwiseProduct(Vector::Ones(h.size()) - g.r);
    const Vector dc = Vector::Ones(h.size()) - g.candidate.cwiseAbs2();
    const Matrix jz = dz.asDiagonal() * p.W_z;
    const Matrix jr = dr.asDiagonal() * p.W_r;
    const Matrix jc = dc.asDiagonal() * (p.W_h + p.U_h * (h.asDiagonal() * jr));
    return (g.candidate - h).asDiagonal() * jz + g.z.asDiagonal() * jc;
}

Vector gru_step(const GruParams& p, std::size_t k, const Vector& h) {
    return gru_cell(p, input_row(p.inputs, k), h).out;
}

Matrix gru_jacobian(const GruParams& p, std::size_t k, const Vector& h) {
    return gru_cell_jacobian(p, input_row(p.inputs, k), h);
}

Vector gru_jacobian_diag(const GruParams& p, std::size_t k, const Vector& h) {
    return gru_cell_jacobian_diag(p, input_row(p.inputs, k), h);
}

GruModel::GruModel(GruParams params, Vector h0) : params_(std::move(params)), h0_(std::move(h0)) {
    params_.validate();
    require(h0_.size() == static_cast<Eigen::Index>(params_.hidden_size()) && h0_.allFinite(),
            "GRU h0 must be a finite D-vector");
}

// ---------------------------------------------------------------------------
// AR-GRU

void ArGruParams::validate() const {
    gru.validate();
    const auto n = static_cast<Eigen::Index>(hidden_size());
    require(gru.input_size() == 1, "AR-GRU input size must be 1");
    require(w_mu.size() == n && w_sigma.size() == n, "AR-GRU readout weights must have length N_h");
    require(h0.size() == n, "AR-GRU h0 must have length N_h");
    require(w_mu.allFinite() && w_sigma.allFinite() && h0.allFinite() && noise.allFinite() &&
                std::isfinite(b_mu) && std::isfinite(b_sigma) && std::isfinite(initial_output),
            "AR-GRU parameters must be finite");
}

ArGruOutput argru_readout(const ArGruParams& p, std::size_t k, Real x, const Vector& h) {
    ArGruOutput o;
    o.h = gru_cell(p.gru, Vector::Constant(1, x), h).out;
    o.mean = p.w_mu.dot(o.h) + p.b_mu;
    o.variance = softplus(p.w_sigma.dot(o.h) + p.b_sigma);
    o.x = o.mean + std::sqrt(o.variance) * p.noise(static_cast<Eigen::Index>(k));
    return o;
}

ArGruModel::ArGruModel(ArGruParams params) : params_(std::move(params)) { params_.validate(); }

Vector ArGruModel::initial_state() const {
    Vector s(state_dim());
    s(0) = params_.initial_output;
    s.tail(params_.h0.size()) = params_.h0;
    return s;
}

Vector ArGruModel::step(std::size_t k, const Vector& s) const {
    const auto n = static_cast<Eigen::Index>(params_.hidden_size());
    const ArGruOutput o = argru_readout(params_, k, s(0), s.tail(n));
    Vector out(n + 1);
    out(0) = o.x;
    out.tail(n) = o.h;
    return out;
}

Matrix ArGruModel::jacobian(std::size_t k, const Vector& s) const {
    const auto n = static_cast<Eigen::Index>(params_.hidden_size());
    const Vector x = Vector::Constant(1, s(0));
    const Vector h = s.tail(n);
    const Matrix jh = gru_cell_jacobian(params_.gru, x, h);
    const Vector jx = gru_cell_input_jacobian(params_.gru, x, h).col(0);
    const Vector hn = gru_cell(params_.gru, x, h).out;

    // dx'/dh' = w_mu + ε dσ/dh', with σ = sqrt(softplus(a)) and dσ/da = sigmoid(a) / (2σ)
    const Real a = params_.w_sigma.dot(hn) + params_.b_sigma;
    const Real sigma = std::sqrt(softplus(a));
    const Real eps = params_.noise(static_cast<Eigen::Index>(k));
    const Vector g = params_.w_mu + eps * sigmoid(a) / (2 * sigma) * params_.w_sigma;

    Matrix jac(n + 1, n + 1);
    jac(0, 0) = g.dot(jx);
    jac.block(0, 1, 1, n) = g.transpose() * jh;
    jac.block(1, 0, n, 1) = jx;
    jac.block(1, 1, n, n) = jh;
    return jac;
}

Vector ArGruModel::jacobian_diag(std::size_t k, const Vector& s) const {
    const auto n = static_cast<Eigen::Index>(params_.hidden_size());
    const Vector x = Vector::Constant(1, s(0));
    const Vector h = s.tail(n);
    const Vector jx = gru_cell_input_jacobian(params_.gru, x, h).col(0);
    const Vector hn = gru_cell(params_.gru, x, h).out;
    const Real a = params_.w_sigma.dot(hn) + params_.b_sigma;
    const Real sigma = std::sqrt(softplus(a));
    const Real eps = params_.noise(static_cast<Eigen::Index>(k));
    const Vector g = params_.w_mu + eps * sigmoid(a) / (2 * sigma) * params_.w_sigma;

    Vector diag(n + 1);
    diag(0) = g.dot(jx);
    diag.tail(n) = gru_cell_jacobian_diag(params_.gru, x, h);
    return diag;
}

// ---------------------------------------------------------------------------
// Affine and tanh test dynamics

AffineModel::AffineModel(Matrix A, Vector c, Vector s0) : A_(std::move(A)), c_(std::move(c)), s0_(std::move(s0)) {
    require(c_.size() > 0, "affine model needs D >= 1");
    require(A_.rows() == c_.size() && A_.cols() == c_.size(), "affine A must be D×D");
    require(s0_.size() == c_.size(), "affine s0 must have length D");
    require(A_.allFinite() && c_.allFinite() && s0_.allFinite(), "affine parameters must be finite");
}

TanhModel::TanhModel(Real gain, Matrix W, RowMatrix inputs, Vector s0)
    : gain_(gain), W_(std::move(W)), inputs_(std::move(inputs)), s0_(std::move(s0)) {
    require(W_.rows() > 0 && W_.rows() == W_.cols(), "tanh W must be D×D");
    require(inputs_.cols() == W_.rows(), "tanh inputs must have D columns");
    require(s0_.size() == W_.rows(), "tanh s0 must have length D");
    require(std::isfinite(gain_) && W_.allFinite() && inputs_.allFinite() && s0_.allFinite(),
            "tanh parameters must be finite");
}

Vector TanhModel::step(std::size_t k, const Vector& s) const {
    return (gain_ * (W_ * s) + input_row(inputs_, k)).array().tanh().matrix();
}

Matrix TanhModel::jacobian(std::size_t k, const Vector& s) const {
    const Vector y = step(k, s);
    return (Vector::Ones(y.size()) - y.cwiseAbs2()).asDiagonal() * (gain_ * W_);
}

Vector TanhModel::jacobian_diag(std::size_t k, const Vector& s) const {
    const Vector y = step(k, s);
    return (Vector::Ones(y.size()) - y.cwiseAbs2()).cwiseProduct(gain_ * W_.diagonal());
}

// ---------------------------------------------------------------------------
// Random initialization

GruParams random_gru_params(std::size_t hidden, std::size_t input, std::size_t horizon, std::uint64_t seed,
                            Real input_scale) {
    std::mt19937_64 rng(seed);
    const Real bound = Real(1) / std::sqrt(static_cast<Real>(hidden));
    GruParams p;
    p.W_z = uniform_matrix(rng, hidden, input, bound);
    p.W_r = uniform_matrix(rng, hidden, input, bound);
    p.W_h = uniform_matrix(rng, hidden, input, bound);
    p.U_z = uniform_matrix(rng, hidden, hidden, bound);
    p.U_r = uniform_matrix(rng, hidden, hidden, bound);
    p.U_h = uniform_matrix(rng, hidden, hidden, bound);
    const auto d = static_cast<Eigen::Index>(hidden);
    p.b_z = Vector::Zero(d);
    p.b_r = Vector::Zero(d);
    p.b_h = Vector::Zero(d);
    p.inputs = normal_rows(rng, horizon, input, input_scale);
    return p;
}

namespace {

ArGruParams random_argru(std::size_t hidden, std::size_t horizon, std::uint64_t seed) {
    ArGruParams p;
    p.gru = random_gru_params(hidden, 1, 0, seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const Real bound = Real(1) / std::sqrt(static_cast<Real>(hidden));
    p.w_mu = uniform_matrix(rng, hidden, 1, bound).col(0);
    p.w_sigma = uniform_matrix(rng, hidden, 1, bound).col(0);
    p.noise = normal_vector(rng, horizon, 1);
    p.h0 = Vector::Zero(static_cast<Eigen::Index>(hidden));
    return p;
}

std::unique_ptr<BundledModel> random_affine(const ModelSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    const std::size_t d = spec.state_dim;
    Matrix A = normal_matrix(rng, d, d, 1);
    const Real rho = Eigen::EigenSolver<Matrix>(A, false).eigenvalues().cwiseAbs().maxCoeff();
    if (rho > 0) A *= spec.spectral_radius / rho;
    Vector c = normal_vector(rng, d, 1);
    Vector s0 = normal_vector(rng, d, 1);
    return std::make_unique<AffineModel>(std::move(A), std::move(c), std::move(s0));
}

std::unique_ptr<BundledModel> random_tanh(const ModelSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    const std::size_t d = spec.state_dim;
    Matrix W = normal_matrix(rng, d, d, Real(1) / std::sqrt(static_cast<Real>(d)));
    RowMatrix inputs = normal_rows(rng, spec.horizon, d, spec.input_scale);
    Vector s0 = Vector::Zero(static_cast<Eigen::Index>(d));
    return std::make_unique<TanhModel>(spec.gain, std::move(W), std::move(inputs), std::move(s0));
}

}  // namespace

ArGruParams fit_noisy_sine_argru(std::size_t hidden, std::size_t horizon, std::uint64_t seed) {
    constexpr Real amplitude = 10;
    constexpr Real period = 100;
    constexpr Real noise_std = 1;
    constexpr std::size_t train_length = 2000;
    constexpr Real ridge = Real(1e-6);

    ArGruParams p = random_argru(hidden, horizon, seed);
    // Keep the inputs inside the non-saturated range of the gates.
    p.gru.W_z /= amplitude;
    p.gru.W_r /= amplitude;
    p.gru.W_h /= amplitude;

    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<Real> white(0, noise_std);
    std::vector<Real> target(train_length + 1);
    const Real pi = std::acos(Real(-1));
    for (std::size_t t = 0; t <= train_length; ++t)
        target[t] = amplitude * std::sin(2 * pi * static_cast<Real>(t) / period) + white(rng);

    // Teacher-forced features [h_t, 1] predicting the next sample.
    const auto n = static_cast<Eigen::Index>(hidden);
    Matrix features(static_cast<Eigen::Index>(train_length), n + 1);
    Vector y(static_cast<Eigen::Index>(train_length));
    Vector h = p.h0;
    for (std::size_t t = 0; t < train_length; ++t) {
        h = gru_cell(p.gru, Vector::Constant(1, target[t]), h).out;
        features.row(static_cast<Eigen::Index>(t)).head(n) = h.transpose();
        features(static_cast<Eigen::Index>(t), n) = 1;
        y(static_cast<Eigen::Index>(t)) = target[t + 1];
    }
    Matrix gram = features.transpose() * features;
    gram.diagonal().array() += ridge * static_cast<Real>(train_length);
    const Vector coef = gram.ldlt().solve(features.transpose() * y);
    p.w_mu = coef.head(n);
    p.b_mu = coef(n);

    const Real mse = (features * coef - y).squaredNorm() / static_cast<Real>(train_length);
    p.w_sigma = Vector::Zero(n);
    p.b_sigma = inverse_softplus(std::max(mse, Real(1e-6)));
    p.initial_output = target[0];
    return p;
}

std::unique_ptr<BundledModel> init_random(const ModelSpec& spec) {
    require(spec.state_dim >= 1, "state_dim must be >= 1");
    require(spec.horizon >= 1, "horizon must be >= 1");
    if (spec.kind == "gru") {
        const std::size_t input = spec.input_dim == 0 ? spec.state_dim : spec.input_dim;
        GruParams p = random_gru_params(spec.state_dim, input, spec.horizon, spec.seed, spec.input_scale);
        return std::make_unique<GruModel>(std::move(p), Vector::Zero(static_cast<Eigen::Index>(spec.state_dim)));
    }
    if (spec.kind == "argru") {
        require(spec.state_dim >= 2, "argru needs state_dim = N_h + 1 >= 2");
        const std::size_t hidden = spec.state_dim - 1;
        ArGruParams p = spec.fitted ? fit_noisy_sine_argru(hidden, spec.horizon, spec.seed)
                                    : random_argru(hidden, spec.horizon, spec.seed);
        return std::make_unique<ArGruModel>(std::move(p));
    }
    if (spec.kind == "affine") return random_affine(spec);
    if (spec.kind == "tanh") return random_tanh(spec);
    throw ParameterError("unknown model kind '" + spec.kind + "'");
}

Matrix finite_difference_jacobian(const DynamicsModel& model, std::size_t k, const Vector& s, Real eps) {
    const Eigen::Index n = s.size();
    Matrix jac(static_cast<Eigen::Index>(model.state_dim()), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const Real h = eps * std::max(Real(1), std::abs(s(j)));
        Vector plus = s;
        Vector minus = s;
        plus(j) += h;
        minus(j) -= h;
        jac.col(j) = (model.step(k, plus) - model.step(k, minus)) / (2 * h);
    }
    return jac;
}

}  // namespace fpr::models
