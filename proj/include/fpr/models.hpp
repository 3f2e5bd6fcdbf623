#pragma once

// Bundled dynamics with analytic Jacobians: GRU, autoregressive GRU with frozen
// sampling noise, affine maps and gain-scaled tanh networks.

#include "fpr/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <string>

namespace fpr::models {

/// Fully gated GRU cell weights plus the input sequence absorbed into f_t.
///
///   z  = σ(W_z x + U_z h + b_z)
///   r  = σ(W_r x + U_r h + b_r)
///   h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
///   h' = (1 - z) ⊙ h + z ⊙ h̃
struct GruParams {
    Matrix W_z, W_r, W_h;  // D×I
    Matrix U_z, U_r, U_h;  // D×D
    Vector b_z, b_r, b_h;  // D
    RowMatrix inputs;      // T×I, row k is the input consumed by step k

    [[nodiscard]] std::size_t hidden_size() const { return static_cast<std::size_t>(U_z.rows()); }
    [[nodiscard]] std::size_t input_size() const { return static_cast<std::size_t>(W_z.cols()); }

    /// Throws ParameterError when shapes disagree or a weight is non-finite.
    void validate() const;
};

/// Intermediate gate values of one GRU cell evaluation.
struct GruGates {
    Vector z, r, candidate, out;
};

[[nodiscard]] GruGates gru_cell(const GruParams& p, const Vector& x, const Vector& h);

/// h' for step k, using input row k.
[[nodiscard]] Vector gru_step(const GruParams& p, std::size_t k, const Vector& h);
/// ∂h'/∂h.
[[nodiscard]] Matrix gru_jacobian(const GruParams& p, std::size_t k, const Vector& h);
/// diag(∂h'/∂h) in O(D) memory.
[[nodiscard]] Vector gru_jacobian_diag(const GruParams& p, std::size_t k, const Vector& h);

[[nodiscard]] Matrix gru_cell_jacobian(const GruParams& p, const Vector& x, const Vector& h);
[[nodiscard]] Vector gru_cell_jacobian_diag(const GruParams& p, const Vector& x, const Vector& h);
/// ∂h'/∂x, D×I.
[[nodiscard]] Matrix gru_cell_input_jacobian(const GruParams& p, const Vector& x, const Vector& h);

/// A DynamicsModel that can be written to the versioned JSON model format.
class BundledModel : public DynamicsModel {
public:
    [[nodiscard]] virtual std::string kind() const = 0;
    [[nodiscard]] virtual nlohmann::json to_json() const = 0;
};

class GruModel final : public BundledModel {
public:
    GruModel(GruParams params, Vector h0);

    std::size_t state_dim() const override { return params_.hidden_size(); }
    std::size_t horizon() const override { return static_cast<std::size_t>(params_.inputs.rows()); }
    Vector initial_state() const override { return h0_; }
    Vector step(std::size_t k, const Vector& s) const override { return gru_step(params_, k, s); }
    Matrix jacobian(std::size_t k, const Vector& s) const override { return gru_jacobian(params_, k, s); }
    Vector jacobian_diag(std::size_t k, const Vector& s) const override { return gru_jacobian_diag(params_, k, s); }

    std::string kind() const override { return "gru"; }
    nlohmann::json to_json() const override;

    [[nodiscard]] const GruParams& params() const noexcept { return params_; }

private:
    GruParams params_;
    Vector h0_;
};

/// Autoregressive GRU: the sampled output is the next input.
///
/// Markov state s_t = (x_{t+1}, h_t). One step runs the GRU on (x, h), reads
/// out μ = w_μ·h' + b_μ and σ² = softplus(w_σ·h' + b_σ), and emits
/// x' = μ + σ ε_k with the frozen noise ε.
struct ArGruParams {
    GruParams gru;  ///< input size 1, `inputs` unused
    Vector w_mu;
    Real b_mu = 0;
    Vector w_sigma;
    Real b_sigma = 0;
    Vector noise;           ///< ε, one draw per step
    Real initial_output = 0;  ///< x_1, first entry of s_0
    Vector h0;

    [[nodiscard]] std::size_t hidden_size() const { return gru.hidden_size(); }
    void validate() const;
};

/// Readout of one AR-GRU step, exposed for independent generation loops.
struct ArGruOutput {
    Vector h;
    Real mean = 0;
    Real variance = 0;
    Real x = 0;
};

[[nodiscard]] ArGruOutput argru_readout(const ArGruParams& p, std::size_t k, Real x, const Vector& h);

class ArGruModel final : public BundledModel {
public:
    explicit ArGruModel(ArGruParams params);

    std::size_t state_dim() const override { return params_.hidden_size() + 1; }
    std::size_t horizon() const override { return static_cast<std::size_t>(params_.noise.size()); }
    Vector initial_state() const override;
    Vector step(std::size_t k, const Vector& s) const override;
    Matrix jacobian(std::size_t k, const Vector& s) const override;
    Vector jacobian_diag(std::size_t k, const Vector& s) const override;

    std::string kind() const override { return "argru"; }
    nlohmann::json to_json() const override;

    [[nodiscard]] const ArGruParams& params() const noexcept { return params_; }

private:
    ArGruParams params_;
};

/// f(s) = A s + c (time-invariant).
class AffineModel final : public BundledModel {
public:
    AffineModel(Matrix A, Vector c, Vector s0);

    std::size_t state_dim() const override { return static_cast<std::size_t>(c_.size()); }
    Vector initial_state() const override { return s0_; }
    Vector step(std::size_t, const Vector& s) const override { return A_ * s + c_; }
    Matrix jacobian(std::size_t, const Vector&) const override { return A_; }
    Vector jacobian_diag(std::size_t, const Vector&) const override { return A_.diagonal(); }

    std::string kind() const override { return "affine"; }
    nlohmann::json to_json() const override;

    [[nodiscard]] const Matrix& A() const noexcept { return A_; }
    [[nodiscard]] const Vector& c() const noexcept { return c_; }

private:
    Matrix A_;
    Vector c_;
    Vector s0_;
};

/// f_k(s) = tanh(gain · W s + u_k): the stiff test network.
class TanhModel final : public BundledModel {
public:
    TanhModel(Real gain, Matrix W, RowMatrix inputs, Vector s0);

    std::size_t state_dim() const override { return static_cast<std::size_t>(W_.rows()); }
    std::size_t horizon() const override { return static_cast<std::size_t>(inputs_.rows()); }
    Vector initial_state() const override { return s0_; }
    Vector step(std::size_t k, const Vector& s) const override;
    Matrix jacobian(std::size_t k, const Vector& s) const override;
    Vector jacobian_diag(std::size_t k, const Vector& s) const override;

    std::string kind() const override { return "tanh"; }
    nlohmann::json to_json() const override;

    [[nodiscard]] Real gain() const noexcept { return gain_; }

private:
    Real gain_;
    Matrix W_;
    RowMatrix inputs_;
    Vector s0_;
};

/// Parameters for init_random. Fields not used by a kind are ignored.
struct ModelSpec {
    std::string kind = "gru";     ///< gru | argru | affine | tanh
    std::size_t state_dim = 4;    ///< D; for argru this is N_h + 1
    std::size_t input_dim = 0;    ///< gru input size, 0 means "same as D"
    std::size_t horizon = 1024;   ///< T: length of the input / noise sequences
    std::uint64_t seed = 0;
    Real spectral_radius = 0.5;   ///< affine
    Real gain = 5;                ///< tanh
    Real input_scale = 1;         ///< std of the gru / tanh input sequences
    bool fitted = false;          ///< argru: fit the readout to a noisy sine wave

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Deterministic given the spec: the same spec yields bit-identical weights.
[[nodiscard]] std::unique_ptr<BundledModel> init_random(const ModelSpec& spec);

[[nodiscard]] GruParams random_gru_params(std::size_t hidden, std::size_t input, std::size_t horizon,
                                          std::uint64_t seed, Real input_scale = 1);

/// Noisy-sine AR-GRU: random recurrent weights, readout fitted by ridge
/// regression on teacher-forced hidden states of a noisy sine wave.
[[nodiscard]] ArGruParams fit_noisy_sine_argru(std::size_t hidden, std::size_t horizon, std::uint64_t seed);

/// Central finite differences of model.step(k, ·) at s (testing fallback).
[[nodiscard]] Matrix finite_difference_jacobian(const DynamicsModel& model, std::size_t k, const Vector& s,
                                                Real eps = Real(1e-6));

inline constexpr int kModelSchemaVersion = 1;

/// Model document: {schema_version, kind, spec..., weights..., noise}.
[[nodiscard]] nlohmann::json save_model(const BundledModel& model, const ModelSpec* spec = nullptr);
/// Reads explicit weights when present, otherwise regenerates from the spec fields.
[[nodiscard]] std::unique_ptr<BundledModel> load_model(const nlohmann::json& doc);

[[nodiscard]] nlohmann::json spec_to_json(const ModelSpec& spec);
[[nodiscard]] ModelSpec spec_from_json(const nlohmann::json& doc);

}  // namespace fpr::models
