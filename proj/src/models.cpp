#include "ltcl/models.hpp"

#include <cmath>
#include <string>

#include "ltcl/error.hpp"
#include "ltcl/kernels.hpp"
#include "ltcl/rng.hpp"

namespace ltcl {

namespace {

void require_nonempty(const LabeledDataset& dataset) {
    require(!dataset.empty(), ErrorCode::Domain, "loss over an empty dataset");
}

void require_classes(const Model& model, const LabeledDataset& dataset) {
    require(dataset.n_classes() <= model.n_classes(), ErrorCode::Shape,
            "dataset has " + std::to_string(dataset.n_classes()) + " classes but the model outputs " +
                std::to_string(model.n_classes()));
}

}  // namespace

Model::Model(ModelKind kind, ParamVector params) : kind_(kind), params_(std::move(params)) {
    if (kind_ == ModelKind::Linear) {
        require(params_.layout().n_layers() == 1, ErrorCode::Shape, "a linear model has exactly one layer");
    }
}

Model make_linear(Index n_features, int n_classes) {
    return {ModelKind::Linear, ParamVector(ParamLayout({n_features, static_cast<Index>(n_classes)}))};
}

Model make_mlp(std::vector<Index> layer_sizes, std::uint64_t seed) {
    ParamVector params{ParamLayout(std::move(layer_sizes))};
    Rng rng(seed);
    for (int l = 0; l < params.layout().n_layers(); ++l) {
        auto w = params.weight(l);
        const double limit = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        for (Index i = 0; i < w.rows(); ++i) {
            for (Index j = 0; j < w.cols(); ++j) {
                w(i, j) = rng.uniform(-limit, limit);
            }
        }
    }
    return {ModelKind::Mlp, std::move(params)};
}

RowMatrix logits(const Model& model, const RowMatrix& features) { return kernels::forward_logits(model, features); }

RowMatrix softmax_rows(const RowMatrix& z) {
    RowMatrix p = z;
    for (Index i = 0; i < p.rows(); ++i) {
        auto row = p.row(i);
        const double m = row.maxCoeff();
        row = (row.array() - m).exp();
        row /= row.sum();
    }
    return p;
}

RowMatrix softmax_forward(const Model& model, const RowMatrix& features) {
    return softmax_rows(logits(model, features));
}

double data_loss(const Model& model, const LabeledDataset& dataset) {
    require_nonempty(dataset);
    require_classes(model, dataset);
    return kernels::cross_entropy(model, dataset.features(), dataset.labels(), {}, nullptr, false).loss;
}

double loss(const Model& model, const LabeledDataset& dataset, const LossSpec& spec) {
    require(spec.mu >= 0.0, ErrorCode::Domain, "mu must be >= 0");
    return data_loss(model, dataset) + 0.5 * spec.mu * model.params().values().squaredNorm();
}

LossAndGradient loss_and_gradient(const Model& model, const LabeledDataset& dataset, const LossSpec& spec) {
    require(spec.mu >= 0.0, ErrorCode::Domain, "mu must be >= 0");
    require_nonempty(dataset);
    require_classes(model, dataset);
    auto term = kernels::cross_entropy(model, dataset.features(), dataset.labels());
    const auto& theta = model.params().values();
    term.loss += 0.5 * spec.mu * theta.squaredNorm();
    term.gradient += spec.mu * theta;
    return {term.loss, std::move(term.gradient)};
}

Vector gradient(const Model& model, const LabeledDataset& dataset, const LossSpec& spec) {
    return loss_and_gradient(model, dataset, spec).gradient;
}

Matrix hessian(const Model& model, const LabeledDataset& dataset, const LossSpec& spec) {
    require(model.kind() == ModelKind::Linear, ErrorCode::UnsupportedModel,
            "exact Hessians are only available for the linear model");
    require(model.params().size() <= kHessianParamGuard, ErrorCode::Capacity,
            "dense Hessian of " + std::to_string(model.params().size()) + " parameters exceeds the guard of " +
                std::to_string(kHessianParamGuard));
    require_nonempty(dataset);
    Matrix h = kernels::linear_hessian(model, dataset.features());
    h.diagonal().array() += spec.mu;
    return h;
}

Vector hessian_vector(const Model& model, const LabeledDataset& dataset, const LossSpec& spec, const Vector& v) {
    require_nonempty(dataset);
    return kernels::linear_hessian_vector(model, dataset.features(), v) + spec.mu * v;
}

Vector hessian_diagonal(const Model& model, const LabeledDataset& dataset, const LossSpec& spec) {
    require_nonempty(dataset);
    return kernels::linear_hessian_diagonal(model, dataset.features()).array() + spec.mu;
}

ForwardBackward mlp_forward_backward(const Model& model, const RowMatrix& batch, std::span<const int> labels,
                                     const LossSpec& spec) {
    require(batch.rows() > 0, ErrorCode::Domain, "empty batch");
    require(batch.cols() == model.input_dim(), ErrorCode::Shape,
            "batch has " + std::to_string(batch.cols()) + " features, model expects " +
                std::to_string(model.input_dim()));
    require(static_cast<Index>(labels.size()) == batch.rows(), ErrorCode::Shape, "label count != batch rows");

    ForwardBackward out;
    auto term = kernels::cross_entropy(model, batch, labels);
    const auto& theta = model.params().values();
    out.loss = term.loss + 0.5 * spec.mu * theta.squaredNorm();
    out.gradient = std::move(term.gradient) + spec.mu * theta;

    const auto& params = model.params();
    RowMatrix a = batch;
    for (int l = 0; l < model.n_layers(); ++l) {
        out.layer_inputs.push_back(a);
        if (l + 1 < model.n_layers()) {
            RowMatrix z = a * params.weight(l).transpose();
            z.rowwise() += params.bias(l).transpose();
            a = z.cwiseMax(0.0);
        }
    }
    return out;
}

std::vector<int> predict(const Model& model, const RowMatrix& features) { return kernels::predict(model, features); }

}  // namespace ltcl
