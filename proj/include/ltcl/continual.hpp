#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ltcl/datasets.hpp"
#include "ltcl/metrics.hpp"
#include "ltcl/models.hpp"
#include "ltcl/training.hpp"

namespace ltcl {

enum class Strategy { Naive, Ewc, ModifiedEwc, Lwf, Gpm };

const char* to_string(Strategy strategy) noexcept;
std::optional<Strategy> parse_strategy(std::string_view name);

enum class FisherMode { ModelSampled, TrueLoss };

/// Phase-2 mechanism and its hyperparameters.
struct StrategyParams {
    Strategy variant = Strategy::Naive;
    double cl_weight = 0.0;
    TrainConfig phase2;
    double temperature = 2.0;        // lwf
    double energy_threshold = 0.97;  // gpm
    Index gpm_max_samples = 500;
    Index fisher_max_samples = 2000;

    void validate() const;
};

/// Default optimizer settings and CL weight per strategy. Naive shares the
/// EWC optimizer settings with no mechanism.
StrategyParams default_strategy_params(Strategy strategy, Index batch_size = 64, std::uint64_t seed = 0);

struct StrategyState {
    Strategy variant = Strategy::Naive;
    double cl_weight = 0.0;
    Vector anchor;                // ewc variants
    Vector fisher;                // ewc variants
    std::optional<Model> teacher;  // lwf
    double temperature = 2.0;
    std::vector<int> head_classes;
    std::vector<Matrix> bases;    // gpm, one (fan_in x k) basis per weighted layer
};

/// Diagonal Fisher estimate over at most `max_samples` rows (seeded subsample).
/// ModelSampled draws each label from the model's predictive distribution;
/// TrueLoss uses the dataset label.
Vector fisher_diagonal(const Model& model, const LabeledDataset& dataset, FisherMode mode, Index max_samples,
                       std::uint64_t seed = 0);

/// (lambda/2) sum F_i (theta_i - anchor_i)^2; adds lambda F (theta - anchor) to
/// `grad` when given.
double ewc_penalty(const Vector& theta, const StrategyState& state, Vector* grad = nullptr);

struct LwfLoss {
    double total = 0.0;
    double cross_entropy = 0.0;
    double distillation = 0.0;  // mean KL(teacher_T || student_T), unscaled
};

/// CE on the true labels + cl_weight * T^2 * KL over `classes` (all when empty).
LwfLoss lwf_loss(const RowMatrix& student_logits, const RowMatrix& teacher_logits, std::span<const int> labels,
                 double temperature, double cl_weight, std::span<const int> classes = {});

/// Logit term adding cl_weight * T^2 * KL on `classes` against precomputed
/// teacher logits indexed by dataset row.
kernels::LogitTerm make_distillation_term(const RowMatrix& teacher_logits, std::vector<int> classes,
                                          double temperature, double cl_weight);

/// Orthonormal basis (columns) of the leading right singular vectors of
/// `activations` (samples x fan_in) capturing `energy_threshold` of the energy.
Matrix gpm_basis(const Matrix& activations, double energy_threshold);

std::vector<Matrix> gpm_collect_bases(const Model& model, const LabeledDataset& head, double energy_threshold,
                                      Index max_samples, std::uint64_t seed = 0);

/// g - (g M) M^T, removing the component of each weight row inside span(M).
RowMatrix gpm_project(const RowMatrix& layer_gradient, const Matrix& basis);

/// Applies gpm_project to every weight segment of a flat gradient (biases untouched).
void gpm_project_all(const ParamLayout& layout, const std::vector<Matrix>& bases, Vector& gradient);

StrategyState prepare_state(const StrategyParams& params, const Model& head_model, const HeadTailSplit& split,
                            std::uint64_t seed = 0);

struct GpmAudit {
    std::size_t steps = 0;
    // max over steps and layers of ||dW M|| / ||dW||
    double max_in_span_ratio = 0.0;
    // max over layers of max|M^T M - I|
    double max_orthonormality_error = 0.0;
};

struct PhaseResult {
    Strategy variant = Strategy::Naive;
    Model model_after_head;
    Model model_after_tail;
    MetricsReport metrics_before;
    MetricsReport metrics_after;
    TransferDecomposition transfer;
    TrainTrace head_trace;
    TrainTrace tail_trace;
    double head_drop = 0.0;
    std::optional<GpmAudit> gpm_audit;
};

struct TwoPhaseConfig {
    Model initial;
    LossSpec loss;
    TrainConfig phase1;
    StrategyParams strategy;
    std::uint64_t seed = 0;
};

/// Phase 1 on the head, strategy preparation, phase 2 on the tail.
PhaseResult run_two_phase(const HeadTailSplit& split, const LabeledDataset& test, const TwoPhaseConfig& config);

/// Phase 2 only, starting from an already trained head model.
PhaseResult continue_from_head(const Model& head_model, const TrainTrace& head_trace, const HeadTailSplit& split,
                               const LabeledDataset& test, const TwoPhaseConfig& config);

}  // namespace ltcl
