#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ltcl/models.hpp"

// Data-term kernels. The parallel versions split the rows into fixed blocks of
// kBlockRows, evaluate blocks concurrently and reduce partial results in block
// order, so results are bit-identical for any worker count. The serial versions
// are straightforward per-sample loops kept as a reference for testing.
namespace ltcl::kernels {

inline constexpr Index kBlockRows = 256;

void set_workers(int workers);
int workers();

/// Extra loss applied to the output logits of a set of rows. Receives the
/// logits of `rows` (global row ids, same order), returns the summed loss over
/// those rows and accumulates d(summed loss)/d(logits) into `dlogits`.
using LogitTerm = std::function<double(const RowMatrix& logits, std::span<const Index> rows, RowMatrix& dlogits)>;

struct DataTerm {
    double loss = 0.0;
    Vector gradient;  // empty when not requested
};

/// Mean cross-entropy (plus optional logit term) over `rows` of `features`
/// (all rows when `rows` is empty). No regulariser.
DataTerm cross_entropy(const Model& model, const RowMatrix& features, std::span<const int> labels,
                       std::span<const Index> rows = {}, const LogitTerm* extra = nullptr,
                       bool want_gradient = true);

DataTerm cross_entropy_serial(const Model& model, const RowMatrix& features, std::span<const int> labels,
                              bool want_gradient = true);

// Linear model only; data term of the Hessian, mean over rows.
Vector linear_hessian_vector(const Model& model, const RowMatrix& features, const Vector& v);
Vector linear_hessian_vector_serial(const Model& model, const RowMatrix& features, const Vector& v);
Matrix linear_hessian(const Model& model, const RowMatrix& features);
Matrix linear_hessian_serial(const Model& model, const RowMatrix& features);
Vector linear_hessian_diagonal(const Model& model, const RowMatrix& features);

RowMatrix forward_logits(const Model& model, const RowMatrix& features);
std::vector<int> predict(const Model& model, const RowMatrix& features);
std::vector<int> predict_serial(const Model& model, const RowMatrix& features);

}  // namespace ltcl::kernels
