#pragma once

// Command-line front end: run configuration, the evaluate / benchmark / sweep
// commands and their CSV and JSON reports.

#include "fpr/models.hpp"
#include "fpr/elk.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fpr::cli {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

enum ExitCode : int { kSuccess = 0, kConfigError = 1, kNotConverged = 2, kNumericalError = 3 };

enum class Solver { sequential, deer, quasi_deer, elk, quasi_elk };
enum class Format { csv, json };

[[nodiscard]] std::string to_string(Solver s);
[[nodiscard]] Solver parse_solver(const std::string& name);
[[nodiscard]] std::string to_string(Format f);
[[nodiscard]] Format parse_format(const std::string& name);
[[nodiscard]] constexpr bool is_elk(Solver s) noexcept { return s == Solver::elk || s == Solver::quasi_elk; }

/// Invalid or unreadable configuration; maps to exit code 1.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Everything a command needs. List-valued fields (solvers, T, D, seeds) are
/// expanded as a grid by `benchmark`; `evaluate` and `sweep` take one value each.
struct RunConfig {
    models::ModelSpec model;                 ///< kind and model hyperparameters
    std::optional<std::string> model_path;   ///< saved model document, overrides `model`
    std::vector<Solver> solvers{Solver::deer};
    std::vector<std::size_t> horizons{1024};  ///< T
    std::vector<std::size_t> dims{4};         ///< D
    std::vector<std::uint64_t> seeds{0};
    Real tol = Real(1e-8);
    std::optional<std::size_t> max_iters;
    std::optional<Real> lambda;
    std::vector<Real> lambda_grid;            ///< empty: the default 8-point grid
    elk::Inference inference = elk::Inference::filter;
    int workers = Execution::default_workers();
    std::size_t repetitions = 1;
    std::size_t warmup = 5;
    std::optional<std::string> output;
    Format format = Format::json;

    /// Throws ConfigError on inconsistent values.
    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

[[nodiscard]] nlohmann::json config_to_json(const RunConfig& c);
/// Accepts scalars or arrays for solver / T / D / seed. Throws ConfigError.
[[nodiscard]] RunConfig config_from_json(const nlohmann::json& doc);
[[nodiscard]] RunConfig load_config(const std::string& path);

/// Model for one (T, D, seed) grid point.
[[nodiscard]] std::unique_ptr<models::BundledModel> make_model(const RunConfig& c, std::size_t T, std::size_t D,
                                                               std::uint64_t seed);

/// Outcome of one solve; the unit every report is assembled from.
struct RunRecord {
    Solver solver = Solver::deer;
    std::size_t T = 0;
    std::size_t D = 0;
    std::uint64_t seed = 0;
    std::size_t iterations = 0;
    bool converged = false;
    Real final_residual = 0;
    Real mad = 0;  ///< against the sequential trace
    double wall_ms = 0;
    double ms_per_iter = 0;
    std::size_t elem_bytes = 0;
    std::size_t resets = 0;
    std::size_t nonfinite_iterations = 0;
    std::size_t ridge_activations = 0;

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

/// Solves one instance. The sequential oracle is computed once by the caller.
[[nodiscard]] RunRecord run_solver(Solver solver, const DynamicsModel& model, const StateTrace& oracle,
                                   const RunConfig& c, std::uint64_t seed, Real lambda);

struct EvaluateReport {
    RunRecord record;
    std::vector<Real> residual_norm_history;

    friend bool operator==(const EvaluateReport&, const EvaluateReport&) = default;
};

struct BenchmarkRow {
    Solver solver = Solver::deer;
    std::size_t T = 0;
    std::size_t D = 0;
    std::uint64_t seed = 0;
    std::size_t rep = 0;
    double wall_ms = 0;
    std::size_t iters = 0;
    double ms_per_iter = 0;
    std::size_t elem_bytes = 0;
    bool converged = false;

    friend bool operator==(const BenchmarkRow&, const BenchmarkRow&) = default;
};

struct Summary {
    double mean = 0;
    double std = 0;
    friend bool operator==(const Summary&, const Summary&) = default;
};

struct BenchmarkAggregate {
    Solver solver = Solver::deer;
    std::size_t T = 0;
    std::size_t D = 0;
    std::size_t runs = 0;
    Summary wall_ms;
    Summary iters;
    Summary ms_per_iter;
    Summary elem_bytes;
    double converged_fraction = 0;

    friend bool operator==(const BenchmarkAggregate&, const BenchmarkAggregate&) = default;
};

struct BenchmarkReport {
    std::vector<BenchmarkRow> rows;
    std::vector<BenchmarkAggregate> aggregates;

    friend bool operator==(const BenchmarkReport&, const BenchmarkReport&) = default;
};

struct SweepRow {
    Real lambda = 0;
    std::size_t iters = 0;
    bool converged = false;
    Real final_residual = 0;
    bool selected = false;

    friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepReport {
    Solver solver = Solver::elk;
    std::size_t T = 0;
    std::size_t D = 0;
    std::uint64_t seed = 0;
    std::optional<Real> selected_lambda;
    std::vector<SweepRow> rows;

    friend bool operator==(const SweepReport&, const SweepReport&) = default;
};

inline constexpr const char* kBenchmarkCsvHeader = "solver,T,D,seed,rep,wall_ms,iters,ms_per_iter,elem_bytes,converged";
inline constexpr const char* kSweepCsvHeader = "lambda,iters,converged,final_residual,selected";
inline constexpr const char* kEvaluateCsvHeader =
    "solver,T,D,seed,iters,converged,final_residual,mad,wall_ms,ms_per_iter,elem_bytes,resets,nonfinite_iterations,"
    "ridge_activations";

[[nodiscard]] EvaluateReport cmd_evaluate(const RunConfig& c);
[[nodiscard]] BenchmarkReport cmd_benchmark(const RunConfig& c);
[[nodiscard]] SweepReport cmd_sweep(const RunConfig& c);

[[nodiscard]] int exit_code(const EvaluateReport& r);
[[nodiscard]] int exit_code(const BenchmarkReport& r);
[[nodiscard]] int exit_code(const SweepReport& r);

[[nodiscard]] std::vector<BenchmarkAggregate> aggregate(const std::vector<BenchmarkRow>& rows);

/// Milliseconds rounded to microsecond resolution.
[[nodiscard]] double to_ms(double seconds);

// Serialization. CSV carries the rows only; JSON adds schema_version, the
// resolved config and the build id.
[[nodiscard]] std::string to_csv(const EvaluateReport& r);
[[nodiscard]] std::string to_csv(const BenchmarkReport& r);
[[nodiscard]] std::string to_csv(const SweepReport& r);
[[nodiscard]] nlohmann::json to_json(const EvaluateReport& r, const RunConfig& c);
[[nodiscard]] nlohmann::json to_json(const BenchmarkReport& r, const RunConfig& c);
[[nodiscard]] nlohmann::json to_json(const SweepReport& r, const RunConfig& c);

[[nodiscard]] EvaluateReport evaluate_from_csv(const std::string& text);
[[nodiscard]] BenchmarkReport benchmark_from_csv(const std::string& text);
[[nodiscard]] SweepReport sweep_from_csv(const std::string& text);
[[nodiscard]] EvaluateReport evaluate_from_json(const nlohmann::json& doc);
[[nodiscard]] BenchmarkReport benchmark_from_json(const nlohmann::json& doc);
[[nodiscard]] SweepReport sweep_from_json(const nlohmann::json& doc);

[[nodiscard]] const char* build_id() noexcept;

/// Full command-line entry point. Reports go to --output or `out`;
/// diagnostics go to `err`.
int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fpr::cli
