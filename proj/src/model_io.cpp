#include "fpr/models.hpp"

#include <string>

namespace fpr::models {

using nlohmann::json;

namespace {

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Matrix matrix_from(const json& j, Eigen::Index cols_if_empty = 0) {
    if (!j.is_array()) throw ParameterError("expected a matrix (array of rows)");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = rows == 0 ? cols_if_empty : static_cast<Eigen::Index>(j.at(0).size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const json& row = j.at(static_cast<std::size_t>(i));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw ParameterError("ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<Real>();
    }
    return m;
}

Vector vector_from(const json& j) {
    if (!j.is_array()) throw ParameterError("expected a vector (array of numbers)");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<Real>();
    return v;
}

json gru_weights(const GruParams& p) {
    return json{{"W_z", matrix_json(p.W_z)}, {"W_r", matrix_json(p.W_r)}, {"W_h", matrix_json(p.W_h)},
                {"U_z", matrix_json(p.U_z)}, {"U_r", matrix_json(p.U_r)}, {"U_h", matrix_json(p.U_h)},
                {"b_z", vector_json(p.b_z)}, {"b_r", vector_json(p.b_r)}, {"b_h", vector_json(p.b_h)}};
}

GruParams gru_from(const json& w, const json* inputs) {
    GruParams p;
    p.W_z = matrix_from(w.at("W_z"));
    p.W_r = matrix_from(w.at("W_r"));
    p.W_h = matrix_from(w.at("W_h"));
    p.U_z = matrix_from(w.at("U_z"));
    p.U_r = matrix_from(w.at("U_r"));
    p.U_h = matrix_from(w.at("U_h"));
    p.b_z = vector_from(w.at("b_z"));
    p.b_r = vector_from(w.at("b_r"));
    p.b_h = vector_from(w.at("b_h"));
    p.inputs = inputs ? RowMatrix(matrix_from(*inputs, p.W_z.cols())) : RowMatrix(0, p.W_z.cols());
    return p;
}

}  // namespace

json GruModel::to_json() const {
    return json{{"weights", gru_weights(params_)},
                {"inputs", matrix_json(params_.inputs)},
                {"initial_state", vector_json(h0_)}};
}

json ArGruModel::to_json() const {
    const ArGruParams& p = params_;
    return json{{"weights",
                 {{"gru", gru_weights(p.gru)},
                  {"w_mu", vector_json(p.w_mu)},
                  {"b_mu", p.b_mu},
                  {"w_sigma", vector_json(p.w_sigma)},
                  {"b_sigma", p.b_sigma}}},
                {"noise", vector_json(p.noise)},
                {"initial_output", p.initial_output},
                {"initial_state", vector_json(p.h0)}};
}

json AffineModel::to_json() const {
    return json{{"weights", {{"A", matrix_json(A_)}, {"c", vector_json(c_)}}}, {"initial_state", vector_json(s0_)}};
}

json TanhModel::to_json() const {
    return json{{"weights", {{"gain", gain_}, {"W", matrix_json(W_)}}},
                {"inputs", matrix_json(inputs_)},
                {"initial_state", vector_json(s0_)}};
}

json spec_to_json(const ModelSpec& spec) {
    return json{{"kind", spec.kind},           {"state_dim", spec.state_dim},
                {"input_dim", spec.input_dim}, {"horizon", spec.horizon},
                {"seed", spec.seed},           {"spectral_radius", spec.spectral_radius},
                {"gain", spec.gain},           {"input_scale", spec.input_scale},
                {"fitted", spec.fitted}};
}

ModelSpec spec_from_json(const json& doc) {
    ModelSpec spec;
    if (!doc.is_object()) throw ParameterError("model spec must be a JSON object");
    spec.kind = doc.value("kind", spec.kind);
    spec.state_dim = doc.value("state_dim", spec.state_dim);
    spec.input_dim = doc.value("input_dim", spec.input_dim);
    spec.horizon = doc.value("horizon", spec.horizon);
    spec.seed = doc.value("seed", spec.seed);
    spec.spectral_radius = doc.value("spectral_radius", spec.spectral_radius);
    spec.gain = doc.value("gain", spec.gain);
    spec.input_scale = doc.value("input_scale", spec.input_scale);
    spec.fitted = doc.value("fitted", spec.fitted);
    return spec;
}

json save_model(const BundledModel& model, const ModelSpec* spec) {
    json doc = spec ? spec_to_json(*spec) : json::object();
    doc["schema_version"] = kModelSchemaVersion;
    doc["kind"] = model.kind();
    doc["state_dim"] = model.state_dim();
    const json body = model.to_json();
    for (const auto& [key, value] : body.items()) doc[key] = value;
    return doc;
}

std::unique_ptr<BundledModel> load_model(const json& doc) {
    if (!doc.is_object()) throw ParameterError("model document must be a JSON object");
    const int version = doc.value("schema_version", kModelSchemaVersion);
    if (version != kModelSchemaVersion) {
        throw ParameterError("unsupported model schema_version " + std::to_string(version));
    }
    if (!doc.contains("weights")) return init_random(spec_from_json(doc));

    try {
        const std::string kind = doc.at("kind").get<std::string>();
        const json& w = doc.at("weights");
        if (kind == "gru") {
            GruParams p = gru_from(w, &doc.at("inputs"));
            return std::make_unique<GruModel>(std::move(p), vector_from(doc.at("initial_state")));
        }
        if (kind == "argru") {
            ArGruParams p;
            p.gru = gru_from(w.at("gru"), nullptr);
            p.w_mu = vector_from(w.at("w_mu"));
            p.b_mu = w.at("b_mu").get<Real>();
            p.w_sigma = vector_from(w.at("w_sigma"));
            p.b_sigma = w.at("b_sigma").get<Real>();
            p.noise = vector_from(doc.at("noise"));
            p.initial_output = doc.at("initial_output").get<Real>();
            p.h0 = vector_from(doc.at("initial_state"));
            return std::make_unique<ArGruModel>(std::move(p));
        }
        if (kind == "affine") {
            return std::make_unique<AffineModel>(matrix_from(w.at("A")), vector_from(w.at("c")),
                                                 vector_from(doc.at("initial_state")));
        }
        if (kind == "tanh") {
            const Matrix W = matrix_from(w.at("W"));
            return std::make_unique<TanhModel>(w.at("gain").get<Real>(), W, RowMatrix(matrix_from(doc.at("inputs"), W.rows())),
                                               vector_from(doc.at("initial_state")));
        }
        throw ParameterError("unknown model kind '" + kind + "'");
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed model document: ") + e.what());
    }
}

}  // namespace fpr::models
