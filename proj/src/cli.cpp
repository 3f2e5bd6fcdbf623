#include "fpr/cli.hpp"

#include "fpr/deer.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <tuple>

#ifndef FPR_BUILD_ID
#define FPR_BUILD_ID "unknown"
#endif

namespace fpr::cli {

using nlohmann::json;

const char* build_id() noexcept { return FPR_BUILD_ID; }

// ---------------------------------------------------------------------------
// Enums

std::string to_string(Solver s) {
    switch (s) {
        case Solver::sequential: return "sequential";
        case Solver::deer: return "deer";
        case Solver::quasi_deer: return "quasi-deer";
        case Solver::elk: return "elk";
        case Solver::quasi_elk: return "quasi-elk";
    }
    return "?";
}

Solver parse_solver(const std::string& name) {
    for (Solver s : {Solver::sequential, Solver::deer, Solver::quasi_deer, Solver::elk, Solver::quasi_elk})
        if (to_string(s) == name) return s;
    throw ConfigError("unknown solver '" + name + "' (sequential|deer|quasi-deer|elk|quasi-elk)");
}

std::string to_string(Format f) { return f == Format::csv ? "csv" : "json"; }

Format parse_format(const std::string& name) {
    if (name == "csv") return Format::csv;
    if (name == "json") return Format::json;
    throw ConfigError("unknown format '" + name + "' (csv|json)");
}

namespace {

elk::Inference parse_inference(const std::string& name) {
    if (name == "filter") return elk::Inference::filter;
    if (name == "smoother") return elk::Inference::smoother;
    throw ConfigError("unknown inference '" + name + "' (filter|smoother)");
}

JacobianMode mode_of(Solver s) {
    return s == Solver::quasi_deer || s == Solver::quasi_elk ? JacobianMode::diagonal : JacobianMode::dense;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
    static const char* kinds[] = {"gru", "argru", "affine", "tanh"};
    if (!model_path && std::find(std::begin(kinds), std::end(kinds), model.kind) == std::end(kinds))
        throw ConfigError("unknown model kind '" + model.kind + "'");
    if (solvers.empty()) throw ConfigError("at least one solver is required");
    if (horizons.empty() || dims.empty() || seeds.empty()) throw ConfigError("T, D and seed must be non-empty");
    for (auto t : horizons)
        if (t < 1) throw ConfigError("T must be >= 1");
    for (auto d : dims)
        if (d < 1) throw ConfigError("D must be >= 1");
    if (model.kind == "argru" && !model_path)
        for (auto d : dims)
            if (d < 2) throw ConfigError("argru needs D >= 2 (hidden size + 1)");
    if (!(tol > 0)) throw ConfigError("tol must be positive");
    if (max_iters && *max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (lambda && !(*lambda > 0 && std::isfinite(*lambda))) throw ConfigError("lambda must be positive");
    for (Real l : lambda_grid)
        if (!(l > 0 && std::isfinite(l))) throw ConfigError("lambda grid values must be positive");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
}

json config_to_json(const RunConfig& c) {
    json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["model"] = c.model_path ? json(*c.model_path) : models::spec_to_json(c.model);
    json solvers = json::array();
    for (Solver s : c.solvers) solvers.push_back(to_string(s));
    j["solver"] = solvers;
    j["T"] = c.horizons;
    j["D"] = c.dims;
    j["seed"] = c.seeds;
    j["tol"] = c.tol;
    j["max_iters"] = c.max_iters ? json(*c.max_iters) : json(nullptr);
    j["lambda"] = c.lambda ? json(*c.lambda) : json(nullptr);
    j["lambda_grid"] = c.lambda_grid;
    j["inference"] = elk::to_string(c.inference);
    j["workers"] = c.workers;
    j["repetitions"] = c.repetitions;
    j["warmup"] = c.warmup;
    j["output"] = c.output ? json(*c.output) : json(nullptr);
    j["format"] = to_string(c.format);
    return j;
}

namespace {

template <class T>
std::vector<T> scalar_or_list(const json& v) {
    if (v.is_array()) return v.get<std::vector<T>>();
    return {v.get<T>()};
}

}  // namespace

RunConfig config_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    try {
        const int version = doc.value("schema_version", kConfigSchemaVersion);
        if (version != kConfigSchemaVersion)
            throw ConfigError("unsupported config schema_version " + std::to_string(version));
        for (const auto& [key, _] : doc.items()) {
            static const char* known[] = {"schema_version", "model",     "solver",      "T",          "D",
                                          "seed",           "tol",       "max_iters",   "lambda",     "lambda_grid",
                                          "inference",      "workers",   "repetitions", "warmup",     "output",
                                          "format"};
            if (std::find(std::begin(known), std::end(known), key) == std::end(known))
                throw ConfigError("unknown config key '" + key + "'");
        }
        if (doc.contains("model")) {
            const json& m = doc["model"];
            if (m.is_string()) {
                c.model_path = m.get<std::string>();
            } else {
                c.model = models::spec_from_json(m);
            }
        }
        if (doc.contains("solver")) {
            c.solvers.clear();
            for (const auto& s : scalar_or_list<std::string>(doc["solver"])) c.solvers.push_back(parse_solver(s));
        }
        if (doc.contains("T")) c.horizons = scalar_or_list<std::size_t>(doc["T"]);
        if (doc.contains("D")) c.dims = scalar_or_list<std::size_t>(doc["D"]);
        if (doc.contains("seed")) c.seeds = scalar_or_list<std::uint64_t>(doc["seed"]);
        c.tol = doc.value("tol", c.tol);
        if (doc.contains("max_iters") && !doc["max_iters"].is_null()) c.max_iters = doc["max_iters"].get<std::size_t>();
        if (doc.contains("lambda") && !doc["lambda"].is_null()) c.lambda = doc["lambda"].get<Real>();
        if (doc.contains("lambda_grid")) c.lambda_grid = doc["lambda_grid"].get<std::vector<Real>>();
        if (doc.contains("inference")) c.inference = parse_inference(doc["inference"].get<std::string>());
        c.workers = doc.value("workers", c.workers);
        c.repetitions = doc.value("repetitions", c.repetitions);
        c.warmup = doc.value("warmup", c.warmup);
        if (doc.contains("output") && !doc["output"].is_null()) c.output = doc["output"].get<std::string>();
        if (doc.contains("format")) c.format = parse_format(doc["format"].get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

}  // namespace

RunConfig load_config(const std::string& path) { return config_from_json(read_json_file(path)); }

std::unique_ptr<models::BundledModel> make_model(const RunConfig& c, std::size_t T, std::size_t D,
                                                 std::uint64_t seed) {
    try {
        if (c.model_path) {
            auto model = models::load_model(read_json_file(*c.model_path));
            if (model->horizon() < T)
                throw ConfigError("model file horizon " + std::to_string(model->horizon()) + " is shorter than T");
            return model;
        }
        models::ModelSpec spec = c.model;
        spec.state_dim = D;
        spec.horizon = T;
        spec.seed = seed;
        return models::init_random(spec);
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    } catch (const DimensionError& e) {
        throw ConfigError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Running

double to_ms(double seconds) { return std::round(seconds * 1e6) / 1e3; }

namespace {

struct Outcome {
    RunRecord record;
    SolveReport report;
};

Outcome solve(Solver solver, const DynamicsModel& model, const StateTrace& oracle, const RunConfig& c,
              std::uint64_t seed, Real lambda, bool history) {
    const std::size_t T = oracle.length();
    const Execution exec{c.workers, 0};
    Outcome out;
    RunRecord& r = out.record;
    r.solver = solver;
    r.T = T;
    r.D = model.state_dim();
    r.seed = seed;

    StateTrace trace;
    if (solver == Solver::sequential) {
        const auto start = std::chrono::steady_clock::now();
        trace = sequential_evaluate(model, T);
        out.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.report.converged = true;
        out.report.final_residual = max_abs(residual(trace, model));
    } else if (is_elk(solver)) {
        elk::ElkConfig cfg;
        cfg.lambda = lambda;
        cfg.mode = mode_of(solver);
        cfg.inference = c.inference;
        cfg.max_iters = c.max_iters;
        cfg.tol = c.tol;
        cfg.record_history = history;
        cfg.exec = exec;
        auto res = elk::elk_solve(StateTrace(T, r.D, 0), model, cfg);
        trace = std::move(res.trace);
        out.report = std::move(res.report);
    } else {
        deer::DeerConfig cfg;
        cfg.mode = mode_of(solver);
        cfg.max_iters = c.max_iters;
        cfg.tol = c.tol;
        cfg.record_history = history;
        cfg.exec = exec;
        auto res = deer::deer_solve(StateTrace(T, r.D, 0), model, cfg);
        trace = std::move(res.trace);
        out.report = std::move(res.report);
    }

    const SolveReport& rep = out.report;
    r.iterations = rep.iterations;
    r.converged = rep.converged;
    r.final_residual = rep.final_residual;
    r.mad = mad(trace, oracle);
    r.wall_ms = to_ms(rep.wall_seconds);
    r.ms_per_iter = to_ms(rep.seconds_per_iteration());
    r.elem_bytes = rep.peak_element_bytes;
    r.resets = rep.reset_events.size();
    r.nonfinite_iterations = rep.nonfinite_iterations;
    r.ridge_activations = rep.ridge_activations;
    return out;
}

Real require_lambda(const RunConfig& c, Solver s) {
    if (!is_elk(s)) return 0;
    if (!c.lambda) throw ConfigError("solver " + to_string(s) + " requires lambda");
    return *c.lambda;
}

void require_single(const RunConfig& c, const char* command) {
    if (c.solvers.size() != 1 || c.horizons.size() != 1 || c.dims.size() != 1 || c.seeds.size() != 1)
        throw ConfigError(std::string(command) + " takes a single solver, T, D and seed");
}

}  // namespace

RunRecord run_solver(Solver solver, const DynamicsModel& model, const StateTrace& oracle, const RunConfig& c,
                     std::uint64_t seed, Real lambda) {
    return solve(solver, model, oracle, c, seed, lambda, false).record;
}

EvaluateReport cmd_evaluate(const RunConfig& c) {
    c.validate();
    require_single(c, "evaluate");
    const Solver solver = c.solvers.front();
    const Real lambda = require_lambda(c, solver);
    const auto model = make_model(c, c.horizons.front(), c.dims.front(), c.seeds.front());
    const StateTrace oracle = sequential_evaluate(*model, c.horizons.front());
    Outcome o = solve(solver, *model, oracle, c, c.seeds.front(), lambda, true);
    return {o.record, std::move(o.report.residual_norm_history)};
}

BenchmarkReport cmd_benchmark(const RunConfig& c) {
    c.validate();
    for (Solver s : c.solvers) (void)require_lambda(c, s);
    BenchmarkReport out;
    for (std::size_t T : c.horizons) {
        for (std::size_t D : c.dims) {
            for (std::uint64_t seed : c.seeds) {
                const auto model = make_model(c, T, D, seed);
                const StateTrace oracle = sequential_evaluate(*model, T);
                for (Solver s : c.solvers) {
                    const Real lambda = require_lambda(c, s);
                    for (std::size_t w = 0; w < c.warmup; ++w) (void)solve(s, *model, oracle, c, seed, lambda, false);
                    for (std::size_t rep = 0; rep < c.repetitions; ++rep) {
                        const RunRecord r = solve(s, *model, oracle, c, seed, lambda, false).record;
                        out.rows.push_back({s, r.T, r.D, seed, rep, r.wall_ms, r.iterations, r.ms_per_iter,
                                            r.elem_bytes, r.converged});
                    }
                }
            }
        }
    }
    out.aggregates = aggregate(out.rows);
    return out;
}

SweepReport cmd_sweep(const RunConfig& c) {
    c.validate();
    require_single(c, "sweep");
    const Solver solver = c.solvers.front();
    if (!is_elk(solver)) throw ConfigError("sweep needs solver elk or quasi-elk");
    const auto model = make_model(c, c.horizons.front(), c.dims.front(), c.seeds.front());
    const std::size_t T = c.horizons.front();

    elk::ElkConfig cfg;
    cfg.mode = mode_of(solver);
    cfg.inference = c.inference;
    cfg.max_iters = c.max_iters;
    cfg.tol = c.tol;
    cfg.record_history = false;
    cfg.exec = Execution{c.workers, 0};
    const std::vector<Real> grid = c.lambda_grid.empty() ? elk::default_lambda_grid() : c.lambda_grid;
    const elk::SweepResult res = elk::lambda_sweep(StateTrace(T, model->state_dim(), 0), *model, cfg, grid);

    SweepReport out;
    out.solver = solver;
    out.T = T;
    out.D = model->state_dim();
    out.seed = c.seeds.front();
    out.selected_lambda = res.best_lambda;
    for (const auto& e : res.entries) {
        out.rows.push_back({e.lambda, e.report.iterations, e.report.converged, e.report.final_residual,
                            res.best_lambda && *res.best_lambda == e.lambda});
    }
    return out;
}

int exit_code(const EvaluateReport& r) { return r.record.converged ? kSuccess : kNotConverged; }

int exit_code(const BenchmarkReport& r) {
    for (const auto& row : r.rows)
        if (!row.converged) return kNotConverged;
    return kSuccess;
}

int exit_code(const SweepReport& r) { return r.selected_lambda ? kSuccess : kNotConverged; }

namespace {

Summary summarize(const std::vector<double>& v) {
    Summary s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

}  // namespace

std::vector<BenchmarkAggregate> aggregate(const std::vector<BenchmarkRow>& rows) {
    // Groups keep first-appearance order.
    std::vector<std::tuple<Solver, std::size_t, std::size_t>> keys;
    std::map<std::tuple<Solver, std::size_t, std::size_t>, std::vector<const BenchmarkRow*>> groups;
    for (const auto& r : rows) {
        const auto key = std::make_tuple(r.solver, r.T, r.D);
        auto [it, fresh] = groups.try_emplace(key);
        if (fresh) keys.push_back(key);
        it->second.push_back(&r);
    }
    std::vector<BenchmarkAggregate> out;
    for (const auto& key : keys) {
        const auto& g = groups[key];
        std::vector<double> wall, iters, per, bytes;
        double conv = 0;
        for (const BenchmarkRow* r : g) {
            wall.push_back(r->wall_ms);
            iters.push_back(static_cast<double>(r->iters));
            per.push_back(r->ms_per_iter);
            bytes.push_back(static_cast<double>(r->elem_bytes));
            conv += r->converged ? 1 : 0;
        }
        out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), g.size(), summarize(wall),
                       summarize(iters), summarize(per), summarize(bytes), conv / static_cast<double>(g.size())});
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const char* header) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != header) throw ConfigError(std::string("expected CSV header: ") + header);
    const std::size_t width = split(header).size();
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != width) throw ConfigError("CSV row has " + std::to_string(fields.size()) + " fields");
        rows.push_back(std::move(fields));
    }
    return rows;
}

double to_double(const std::string& s) {
    double v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw ConfigError("not a number: '" + s + "'");
    }
    return v;
}

std::uint64_t to_uint(const std::string& s) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("not an integer: '" + s + "'");
    return v;
}

bool to_bool(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("not a boolean: '" + s + "'");
}

const char* flag(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string to_csv(const EvaluateReport& rep) {
    const RunRecord& r = rep.record;
    std::ostringstream out;
    out << kEvaluateCsvHeader << '\n'
        << to_string(r.solver) << ',' << r.T << ',' << r.D << ',' << r.seed << ',' << r.iterations << ','
        << flag(r.converged) << ',' << num(r.final_residual) << ',' << num(r.mad) << ',' << num(r.wall_ms) << ','
        << num(r.ms_per_iter) << ',' << r.elem_bytes << ',' << r.resets << ',' << r.nonfinite_iterations << ','
        << r.ridge_activations << '\n';
    return out.str();
}

std::string to_csv(const BenchmarkReport& rep) {
    std::ostringstream out;
    out << kBenchmarkCsvHeader << '\n';
    for (const auto& r : rep.rows) {
        out << to_string(r.solver) << ',' << r.T << ',' << r.D << ',' << r.seed << ',' << r.rep << ','
            << num(r.wall_ms) << ',' << r.iters << ',' << num(r.ms_per_iter) << ',' << r.elem_bytes << ','
            << flag(r.converged) << '\n';
    }
    return out.str();
}

std::string to_csv(const SweepReport& rep) {
    std::ostringstream out;
    out << kSweepCsvHeader << '\n';
    for (const auto& r : rep.rows) {
        out << num(r.lambda) << ',' << r.iters << ',' << flag(r.converged) << ',' << num(r.final_residual) << ','
            << flag(r.selected) << '\n';
    }
    return out.str();
}

EvaluateReport evaluate_from_csv(const std::string& text) {
    const auto rows = parse_csv(text, kEvaluateCsvHeader);
    if (rows.size() != 1) throw ConfigError("evaluate CSV must hold exactly one row");
    const auto& f = rows.front();
    EvaluateReport rep;
    RunRecord& r = rep.record;
    r.solver = parse_solver(f[0]);
    r.T = to_uint(f[1]);
    r.D = to_uint(f[2]);
    r.seed = to_uint(f[3]);
    r.iterations = to_uint(f[4]);
    r.converged = to_bool(f[5]);
    r.final_residual = static_cast<Real>(to_double(f[6]));
    r.mad = static_cast<Real>(to_double(f[7]));
    r.wall_ms = to_double(f[8]);
    r.ms_per_iter = to_double(f[9]);
    r.elem_bytes = to_uint(f[10]);
    r.resets = to_uint(f[11]);
    r.nonfinite_iterations = to_uint(f[12]);
    r.ridge_activations = to_uint(f[13]);
    return rep;
}

BenchmarkReport benchmark_from_csv(const std::string& text) {
    BenchmarkReport rep;
    for (const auto& f : parse_csv(text, kBenchmarkCsvHeader)) {
        rep.rows.push_back({parse_solver(f[0]), to_uint(f[1]), to_uint(f[2]), to_uint(f[3]), to_uint(f[4]),
                            to_double(f[5]), to_uint(f[6]), to_double(f[7]), to_uint(f[8]), to_bool(f[9])});
    }
    rep.aggregates = aggregate(rep.rows);
    return rep;
}

SweepReport sweep_from_csv(const std::string& text) {
    SweepReport rep;
    for (const auto& f : parse_csv(text, kSweepCsvHeader)) {
        SweepRow r{static_cast<Real>(to_double(f[0])), to_uint(f[1]), to_bool(f[2]),
                   static_cast<Real>(to_double(f[3])), to_bool(f[4])};
        if (r.selected) rep.selected_lambda = r.lambda;
        rep.rows.push_back(r);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

// JSON has no NaN/inf; those are written as strings.
json real_json(double v) {
    if (std::isfinite(v)) return v;
    return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

double real_from(const json& j) {
    if (j.is_number()) return j.get<double>();
    return to_double(j.get<std::string>());
}

json header(const char* command, const RunConfig& c) {
    return json{{"schema_version", kReportSchemaVersion},
                {"command", command},
                {"build_id", build_id()},
                {"config", config_to_json(c)}};
}

json summary_json(const Summary& s) { return json{{"mean", real_json(s.mean)}, {"std", real_json(s.std)}}; }
Summary summary_from(const json& j) { return {real_from(j.at("mean")), real_from(j.at("std"))}; }

template <class Fn>
auto guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
}

}  // namespace

json to_json(const EvaluateReport& rep, const RunConfig& c) {
    const RunRecord& r = rep.record;
    json j = header("evaluate", c);
    json hist = json::array();
    for (Real v : rep.residual_norm_history) hist.push_back(real_json(v));
    j["result"] = json{{"solver", to_string(r.solver)},
                       {"T", r.T},
                       {"D", r.D},
                       {"seed", r.seed},
                       {"iterations", r.iterations},
                       {"converged", r.converged},
                       {"final_residual", real_json(r.final_residual)},
                       {"mad", real_json(r.mad)},
                       {"wall_ms", r.wall_ms},
                       {"ms_per_iter", r.ms_per_iter},
                       {"elem_bytes", r.elem_bytes},
                       {"resets", r.resets},
                       {"nonfinite_iterations", r.nonfinite_iterations},
                       {"ridge_activations", r.ridge_activations},
                       {"residual_norm_history", hist}};
    return j;
}

json to_json(const BenchmarkReport& rep, const RunConfig& c) {
    json j = header("benchmark", c);
    json rows = json::array();
    for (const auto& r : rep.rows) {
        rows.push_back(json{{"solver", to_string(r.solver)},
                            {"T", r.T},
                            {"D", r.D},
                            {"seed", r.seed},
                            {"rep", r.rep},
                            {"wall_ms", r.wall_ms},
                            {"iters", r.iters},
                            {"ms_per_iter", r.ms_per_iter},
                            {"elem_bytes", r.elem_bytes},
                            {"converged", r.converged}});
    }
    json aggs = json::array();
    for (const auto& a : rep.aggregates) {
        aggs.push_back(json{{"solver", to_string(a.solver)},
                            {"T", a.T},
                            {"D", a.D},
                            {"runs", a.runs},
                            {"wall_ms", summary_json(a.wall_ms)},
                            {"iters", summary_json(a.iters)},
                            {"ms_per_iter", summary_json(a.ms_per_iter)},
                            {"elem_bytes", summary_json(a.elem_bytes)},
                            {"converged_fraction", a.converged_fraction}});
    }
    j["rows"] = rows;
    j["aggregates"] = aggs;
    return j;
}

json to_json(const SweepReport& rep, const RunConfig& c) {
    json j = header("sweep", c);
    json rows = json::array();
    for (const auto& r : rep.rows) {
        rows.push_back(json{{"lambda", r.lambda},
                            {"iters", r.iters},
                            {"converged", r.converged},
                            {"final_residual", real_json(r.final_residual)},
                            {"selected", r.selected}});
    }
    j["result"] = json{{"solver", to_string(rep.solver)},
                       {"T", rep.T},
                       {"D", rep.D},
                       {"seed", rep.seed},
                       {"selected_lambda", rep.selected_lambda ? json(*rep.selected_lambda) : json(nullptr)},
                       {"rows", rows}};
    return j;
}

EvaluateReport evaluate_from_json(const json& doc) {
    return guarded([&] {
        const json& j = doc.at("result");
        EvaluateReport rep;
        RunRecord& r = rep.record;
        r.solver = parse_solver(j.at("solver").get<std::string>());
        r.T = j.at("T").get<std::size_t>();
        r.D = j.at("D").get<std::size_t>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.iterations = j.at("iterations").get<std::size_t>();
        r.converged = j.at("converged").get<bool>();
        r.final_residual = static_cast<Real>(real_from(j.at("final_residual")));
        r.mad = static_cast<Real>(real_from(j.at("mad")));
        r.wall_ms = j.at("wall_ms").get<double>();
        r.ms_per_iter = j.at("ms_per_iter").get<double>();
        r.elem_bytes = j.at("elem_bytes").get<std::size_t>();
        r.resets = j.at("resets").get<std::size_t>();
        r.nonfinite_iterations = j.at("nonfinite_iterations").get<std::size_t>();
        r.ridge_activations = j.at("ridge_activations").get<std::size_t>();
        for (const auto& v : j.at("residual_norm_history")) rep.residual_norm_history.push_back(real_from(v));
        return rep;
    });
}

BenchmarkReport benchmark_from_json(const json& doc) {
    return guarded([&] {
        BenchmarkReport rep;
        for (const auto& r : doc.at("rows")) {
            rep.rows.push_back({parse_solver(r.at("solver").get<std::string>()), r.at("T").get<std::size_t>(),
                                r.at("D").get<std::size_t>(), r.at("seed").get<std::uint64_t>(),
                                r.at("rep").get<std::size_t>(), r.at("wall_ms").get<double>(),
                                r.at("iters").get<std::size_t>(), r.at("ms_per_iter").get<double>(),
                                r.at("elem_bytes").get<std::size_t>(), r.at("converged").get<bool>()});
        }
        for (const auto& a : doc.at("aggregates")) {
            rep.aggregates.push_back({parse_solver(a.at("solver").get<std::string>()), a.at("T").get<std::size_t>(),
                                      a.at("D").get<std::size_t>(), a.at("runs").get<std::size_t>(),
                                      summary_from(a.at("wall_ms")), summary_from(a.at("iters")),
                                      summary_from(a.at("ms_per_iter")), summary_from(a.at("elem_bytes")),
                                      a.at("converged_fraction").get<double>()});
        }
        return rep;
    });
}

SweepReport sweep_from_json(const json& doc) {
    return guarded([&] {
        const json& j = doc.at("result");
        SweepReport rep;
        rep.solver = parse_solver(j.at("solver").get<std::string>());
        rep.T = j.at("T").get<std::size_t>();
        rep.D = j.at("D").get<std::size_t>();
        rep.seed = j.at("seed").get<std::uint64_t>();
        if (!j.at("selected_lambda").is_null()) rep.selected_lambda = j.at("selected_lambda").get<Real>();
        for (const auto& r : j.at("rows")) {
            rep.rows.push_back({r.at("lambda").get<Real>(), r.at("iters").get<std::size_t>(),
                                r.at("converged").get<bool>(), static_cast<Real>(real_from(r.at("final_residual"))),
                                r.at("selected").get<bool>()});
        }
        return rep;
    });
}

// ---------------------------------------------------------------------------
// Entry point

namespace {

struct Overrides {
    std::string config_path;
    std::string output;
    std::string format;
    std::string solver;
    std::optional<int> workers;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> T;
    std::optional<std::size_t> D;
    std::optional<Real> lambda;
};

RunConfig resolve(const Overrides& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
    if (!o.output.empty()) c.output = o.output;
    if (!o.format.empty()) c.format = parse_format(o.format);
    if (!o.solver.empty()) c.solvers = {parse_solver(o.solver)};
    if (o.workers) c.workers = *o.workers;
    if (o.seed) c.seeds = {*o.seed};
    if (o.T) c.horizons = {*o.T};
    if (o.D) c.dims = {*o.D};
    if (o.lambda) c.lambda = *o.lambda;
    return c;
}

template <class Report>
int emit(const Report& rep, const RunConfig& c, std::ostream& out) {
    const std::string text = c.format == Format::csv ? to_csv(rep) : to_json(rep, c).dump(2) + "\n";
    if (c.output) {
        std::ofstream file(*c.output);
        if (!file) throw ConfigError("cannot write '" + *c.output + "'");
        file << text;
    } else {
        out << text;
    }
    return exit_code(rep);
}

}  // namespace

int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Parallel evaluation of nonlinear recurrences with DEER and ELK", "fpr"};
    app.require_subcommand(1);
    Overrides o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON run configuration");
        sub->add_option("--output", o.output, "report path (default: standard output)");
        sub->add_option("--format", o.format, "csv or json");
        sub->add_option("--workers", o.workers, "worker threads");
        sub->add_option("--seed", o.seed, "random seed");
        sub->add_option("--solver", o.solver, "sequential|deer|quasi-deer|elk|quasi-elk");
        sub->add_option("-T,--length", o.T, "sequence length");
        sub->add_option("-D,--dim", o.D, "state dimension");
        sub->add_option("--lambda", o.lambda, "ELK damping");
    };
    CLI::App* evaluate = app.add_subcommand("evaluate", "solve once and compare with sequential evaluation");
    CLI::App* benchmark = app.add_subcommand("benchmark", "timed solver grid with warmup and repetitions");
    CLI::App* sweep = app.add_subcommand("sweep", "ELK lambda sweep");
    for (CLI::App* sub : {evaluate, benchmark, sweep}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "fpr: " << e.what() << '\n';
        return kConfigError;
    }

    try {
        const RunConfig c = resolve(o);
        if (evaluate->parsed()) return emit(cmd_evaluate(c), c, out);
        if (benchmark->parsed()) return emit(cmd_benchmark(c), c, out);
        return emit(cmd_sweep(c), c, out);
    } catch (const ConfigError& e) {
        err << "fpr: config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        err << "fpr: config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const NumericalError& e) {
        err << "fpr: numerical error: " << e.what() << '\n';
        return kNumericalError;
    } catch (const std::exception& e) {
        err << "fpr: error: " << e.what() << '\n';
        return kNumericalError;
    }
}

}  // namespace fpr::cli
