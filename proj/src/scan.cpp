#include "fpr/scan.hpp"

namespace fpr::scan {

DenseAffineElement dense_identity(std::size_t dim) {
    const auto d = static_cast<Eigen::Index>(dim);
    return {Matrix::Identity(d, d), Vector::Zero(d)};
}

DiagAffineElement diag_identity(std::size_t dim) {
    const auto d = static_cast<Eigen::Index>(dim);
    return {Vector::Ones(d), Vector::Zero(d)};
}

std::size_t element_dim(const DenseAffineElement& e) { return static_cast<std::size_t>(e.b.size()); }
std::size_t element_dim(const DiagAffineElement& e) { return static_cast<std::size_t>(e.b.size()); }

std::size_t element_bytes(const DenseAffineElement& e) {
    return static_cast<std::size_t>(e.A.size() + e.b.size()) * sizeof(Real);
}

std::size_t element_bytes(const DiagAffineElement& e) {
    return static_cast<std::size_t>(e.a.size() + e.b.size()) * sizeof(Real);
}

namespace {

void check(const DenseAffineElement& e) {
    if (e.A.rows() != e.b.size() || e.A.cols() != e.b.size()) throw DimensionError("dense element: A is not D×D");
}

void check(const DiagAffineElement& e) {
    if (e.a.size() != e.b.size()) throw DimensionError("diagonal element: a and b differ in length");
}

}  // namespace

void combine_into(const DenseAffineElement& first, const DenseAffineElement& second, DenseAffineElement& out) {
    out.A.noalias() = second.A * first.A;
    out.b.noalias() = second.A * first.b;
    out.b += second.b;
}

void combine_into(const DiagAffineElement& first, const DiagAffineElement& second, DiagAffineElement& out) {
    out.a = second.a.cwiseProduct(first.a);
    out.b = second.a.cwiseProduct(first.b) + second.b;
}

DenseAffineElement combine(const DenseAffineElement& first, const DenseAffineElement& second) {
    check(first);
    check(second);
    if (first.b.size() != second.b.size()) throw DimensionError("combine: dimension mismatch");
    DenseAffineElement out{Matrix(first.A.rows(), first.A.cols()), Vector(first.b.size())};
    combine_into(first, second, out);
    return out;
}

DiagAffineElement combine(const DiagAffineElement& first, const DiagAffineElement& second) {
    check(first);
    check(second);
    if (first.b.size() != second.b.size()) throw DimensionError("combine: dimension mismatch");
    DiagAffineElement out{Vector(first.a.size()), Vector(first.b.size())};
    combine_into(first, second, out);
    return out;
}

std::vector<DenseAffineElement> inclusive_scan(std::span<const DenseAffineElement> in, ScanMode mode,
                                               const Execution& exec, ScanStats* stats) {
    for (const auto& e : in) check(e);
    return inclusive_scan(
        in, [](const DenseAffineElement& a, const DenseAffineElement& b, DenseAffineElement& o) { combine_into(a, b, o); },
        mode, exec, stats);
}

std::vector<DiagAffineElement> inclusive_scan(std::span<const DiagAffineElement> in, ScanMode mode,
                                              const Execution& exec, ScanStats* stats) {
    for (const auto& e : in) check(e);
    return inclusive_scan(
        in, [](const DiagAffineElement& a, const DiagAffineElement& b, DiagAffineElement& o) { combine_into(a, b, o); },
        mode, exec, stats);
}

}  // namespace fpr::scan
