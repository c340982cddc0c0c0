#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ltcl/datasets.hpp"
#include "ltcl/params.hpp"

namespace ltcl {

enum class ModelKind { Linear, Mlp };

/// Dense classifier: multinomial logistic regression (one layer) or a rectifier
/// MLP. Parameters live in a single ParamVector; the output layer always has
/// one row per class.
class Model {
public:
    Model() = default;
    Model(ModelKind kind, ParamVector params);

    [[nodiscard]] ModelKind kind() const noexcept { return kind_; }
    [[nodiscard]] const ParamVector& params() const noexcept { return params_; }
    [[nodiscard]] ParamVector& params() noexcept { return params_; }
    [[nodiscard]] const ParamLayout& layout() const noexcept { return params_.layout(); }
    [[nodiscard]] Index input_dim() const { return layout().layer_sizes().front(); }
    [[nodiscard]] int n_classes() const { return static_cast<int>(layout().layer_sizes().back()); }
    [[nodiscard]] int n_layers() const { return layout().n_layers(); }

private:
    ModelKind kind_ = ModelKind::Linear;
    ParamVector params_;
};

/// Zero-initialised logistic regression.
Model make_linear(Index n_features, int n_classes);

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
Model make_mlp(std::vector<Index> layer_sizes, std::uint64_t seed);

struct LossSpec {
    double mu = 0.0;
};

struct LossAndGradient {
    double loss = 0.0;
    Vector gradient;
};

struct ForwardBackward {
    double loss = 0.0;
    Vector gradient;
    // Input matrix of every weighted layer (batch rows x fan_in).
    std::vector<RowMatrix> layer_inputs;
};

RowMatrix logits(const Model& model, const RowMatrix& features);

/// Row-wise softmax with max subtraction.
RowMatrix softmax_rows(const RowMatrix& logits);

RowMatrix softmax_forward(const Model& model, const RowMatrix& features);

/// Mean cross-entropy plus (mu/2)||theta||^2 over all weights and biases.
double loss(const Model& model, const LabeledDataset& dataset, const LossSpec& spec);
Vector gradient(const Model& model, const LabeledDataset& dataset, const LossSpec& spec);
LossAndGradient loss_and_gradient(const Model& model, const LabeledDataset& dataset, const LossSpec& spec);

/// Unregularised mean cross-entropy.
double data_loss(const Model& model, const LabeledDataset& dataset);

// Exact second-order quantities, linear model only.
inline constexpr Index kHessianParamGuard = 5000;
Matrix hessian(const Model& model, const LabeledDataset& dataset, const LossSpec& spec);
Vector hessian_vector(const Model& model, const LabeledDataset& dataset, const LossSpec& spec, const Vector& v);
Vector hessian_diagonal(const Model& model, const LabeledDataset& dataset, const LossSpec& spec);

/// Loss, gradient and the per-layer inputs for a batch.
ForwardBackward mlp_forward_backward(const Model& model, const RowMatrix& batch, std::span<const int> labels,
                                     const LossSpec& spec);

/// Argmax of the logits, smallest index on ties.
std::vector<int> predict(const Model& model, const RowMatrix& features);

}  // namespace ltcl
