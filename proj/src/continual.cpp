#include "ltcl/continual.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

#include "ltcl/error.hpp"
#include "ltcl/kernels.hpp"
#include "ltcl/rng.hpp"

namespace ltcl {

const char* to_string(Strategy strategy) noexcept {
    switch (strategy) {
        case Strategy::Naive: return "naive";
        case Strategy::Ewc: return "ewc";
        case Strategy::ModifiedEwc: return "modified_ewc";
        case Strategy::Lwf: return "lwf";
        case Strategy::Gpm: return "gpm";
    }
    return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
    for (auto s : {Strategy::Naive, Strategy::Ewc, Strategy::ModifiedEwc, Strategy::Lwf, Strategy::Gpm}) {
        if (name == to_string(s)) {
            return s;
        }
    }
    return std::nullopt;
}

void StrategyParams::validate() const {
    phase2.validate();
    require(cl_weight >= 0.0, ErrorCode::Configuration, "cl_weight must be >= 0");
    require(temperature > 0.0, ErrorCode::Configuration, "temperature must be > 0");
    require(energy_threshold > 0.0 && energy_threshold <= 1.0, ErrorCode::Configuration,
            "energy_threshold must lie in (0, 1]");
    require(gpm_max_samples >= 1, ErrorCode::Configuration, "gpm_max_samples must be >= 1");
    require(fisher_max_samples >= 1, ErrorCode::Configuration, "fisher_max_samples must be >= 1");
}

StrategyParams default_strategy_params(Strategy strategy, Index batch_size, std::uint64_t seed) {
    StrategyParams p;
    p.variant = strategy;
    p.phase2.batch_size = batch_size;
    p.phase2.seed = seed;
    switch (strategy) {
        case Strategy::Lwf:
            p.phase2.learning_rate = 0.001;
            p.phase2.momentum = 0.9;
            p.cl_weight = 0.01;
            p.phase2.epochs = 5;
            break;
        case Strategy::Naive:
        case Strategy::Ewc:
            p.phase2.learning_rate = 0.01;
            p.phase2.momentum = 0.9;
            p.cl_weight = strategy == Strategy::Ewc ? 10.0 : 0.0;
            p.phase2.epochs = 90;
            break;
        case Strategy::ModifiedEwc:
            p.phase2.learning_rate = 0.01;
            p.phase2.momentum = 0.9;
            p.cl_weight = 1000.0;
            p.phase2.epochs = 90;
            break;
        case Strategy::Gpm:
            p.phase2.learning_rate = 0.001;
            p.phase2.momentum = 0.0;
            p.phase2.schedule = ScheduleKind::Cosine;
            p.phase2.epochs = 100;
            break;
    }
    return p;
}

Vector fisher_diagonal(const Model& model, const LabeledDataset& dataset, FisherMode mode, Index max_samples,
                       std::uint64_t seed) {
    require(max_samples >= 1, ErrorCode::Domain, "fisher max_samples must be >= 1");
    require(!dataset.empty(), ErrorCode::Domain, "fisher estimate over an empty dataset");
    Rng rng(seed);
    std::vector<Index> rows;
    if (dataset.size() > max_samples) {
        for (auto r : rng.sample_without_replacement(static_cast<std::size_t>(dataset.size()),
                                                     static_cast<std::size_t>(max_samples))) {
            rows.push_back(static_cast<Index>(r));
        }
        std::sort(rows.begin(), rows.end());
    } else {
        rows.resize(static_cast<std::size_t>(dataset.size()));
        for (Index i = 0; i < dataset.size(); ++i) {
            rows[static_cast<std::size_t>(i)] = i;
        }
    }

    std::vector<int> targets = dataset.labels();
    if (mode == FisherMode::ModelSampled) {
        const RowMatrix probs = softmax_forward(model, dataset.features());
        for (Index r : rows) {
            const double u = rng.uniform();
            double cumulative = 0.0;
            int pick = static_cast<int>(probs.cols()) - 1;
            for (Index c = 0; c < probs.cols(); ++c) {
                cumulative += probs(r, c);
                if (u < cumulative) {
                    pick = static_cast<int>(c);
                    break;
                }
            }
            targets[static_cast<std::size_t>(r)] = pick;
        }
    }

    Vector fisher = Vector::Zero(model.params().size());
    for (Index r : rows) {
        const Index one[] = {r};
        const auto term = kernels::cross_entropy(model, dataset.features(), targets, one);
        fisher += term.gradient.cwiseAbs2();
    }
    return fisher / static_cast<double>(rows.size());
}

double ewc_penalty(const Vector& theta, const StrategyState& state, Vector* grad) {
    require(state.variant == Strategy::Ewc || state.variant == Strategy::ModifiedEwc, ErrorCode::Configuration,
            "EWC penalty needs an EWC strategy state");
    require(theta.size() == state.anchor.size() && theta.size() == state.fisher.size(), ErrorCode::Shape,
            "parameter layout differs from the EWC anchor");
    const Vector diff = theta - state.anchor;
    if (grad != nullptr) {
        *grad += state.cl_weight * state.fisher.cwiseProduct(diff);
    }
    return 0.5 * state.cl_weight * state.fisher.dot(diff.cwiseAbs2());
}

namespace {

std::vector<int> all_classes(Index n) {
    std::vector<int> c(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        c[static_cast<std::size_t>(i)] = static_cast<int>(i);
    }
    return c;
}

// Tempered log-softmax over a class subset of one logit row.
void tempered_log_softmax(const double* row, std::span<const int> classes, double temperature, std::vector<double>& out) {
    out.resize(classes.size());
    double m = -INFINITY;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        out[k] = row[classes[k]] / temperature;
        m = std::max(m, out[k]);
    }
    double sum = 0.0;
    for (double v : out) {
        sum += std::exp(v - m);
    }
    const double lse = m + std::log(sum);
    for (auto& v : out) {
        v -= lse;
    }
}

constexpr double kTeacherFloor = 1e-30;

// KL(teacher || student) on a class subset; adds d(KL)/d(student logits) * scale to `dstudent` when given.
double distill_row(const double* student, const double* teacher, std::span<const int> classes, double temperature,
                   double* dstudent, double scale) {
    std::vector<double> log_s;
    std::vector<double> log_t;
    tempered_log_softmax(student, classes, temperature, log_s);
    tempered_log_softmax(teacher, classes, temperature, log_t);
    double kl = 0.0;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const double qt = std::exp(log_t[k]);
        kl += qt * (std::log(std::max(qt, kTeacherFloor)) - log_s[k]);
        if (dstudent != nullptr) {
            dstudent[classes[k]] += scale * (std::exp(log_s[k]) - qt) / temperature;
        }
    }
    return kl;
}

}  // namespace

LwfLoss lwf_loss(const RowMatrix& student_logits, const RowMatrix& teacher_logits, std::span<const int> labels,
                 double temperature, double cl_weight, std::span<const int> classes) {
    require(temperature > 0.0, ErrorCode::Domain, "temperature must be > 0");
    require(student_logits.rows() == teacher_logits.rows() && student_logits.cols() == teacher_logits.cols(),
            ErrorCode::Shape, "student and teacher logits differ in shape");
    require(static_cast<Index>(labels.size()) == student_logits.rows(), ErrorCode::Shape, "label count != rows");
    require(student_logits.rows() > 0, ErrorCode::Domain, "empty batch");
    const auto everything = all_classes(student_logits.cols());
    const std::span<const int> used = classes.empty() ? std::span<const int>(everything) : classes;

    LwfLoss out;
    const RowMatrix log_p = [&] {
        RowMatrix lp = student_logits;
        for (Index i = 0; i < lp.rows(); ++i) {
            auto row = lp.row(i);
            const double m = row.maxCoeff();
            row.array() -= m + std::log((row.array() - m).exp().sum());
        }
        return lp;
    }();
    for (Index i = 0; i < student_logits.rows(); ++i) {
        out.cross_entropy -= log_p(i, labels[static_cast<std::size_t>(i)]);
        out.distillation += distill_row(student_logits.row(i).data(), teacher_logits.row(i).data(), used, temperature,
                                        nullptr, 0.0);
    }
    const double n = static_cast<double>(student_logits.rows());
    out.cross_entropy /= n;
    out.distillation /= n;
    out.total = out.cross_entropy + cl_weight * temperature * temperature * out.distillation;
    return out;
}

kernels::LogitTerm make_distillation_term(const RowMatrix& teacher_logits, std::vector<int> classes, double temperature,
                                          double cl_weight) {
    require(temperature > 0.0, ErrorCode::Domain, "temperature must be > 0");
    if (classes.empty()) {
        classes = all_classes(teacher_logits.cols());
    }
    return [&teacher_logits, classes = std::move(classes), temperature, cl_weight](
               const RowMatrix& logits, std::span<const Index> rows, RowMatrix& dlogits) {
        const double weight = cl_weight * temperature * temperature;
        double total = 0.0;
        for (Index k = 0; k < logits.rows(); ++k) {
            total += distill_row(logits.row(k).data(), teacher_logits.row(rows[static_cast<std::size_t>(k)]).data(),
                                 classes, temperature, dlogits.row(k).data(), weight);
        }
        return weight * total;
    };
}

Matrix gpm_basis(const Matrix& activations, double energy_threshold) {
    require(activations.rows() > 0 && activations.cols() > 0, ErrorCode::Domain, "empty activation matrix");
    require(energy_threshold > 0.0 && energy_threshold <= 1.0, ErrorCode::Domain, "energy threshold must lie in (0, 1]");
    Eigen::BDCSVD<Matrix> svd(activations, Eigen::ComputeThinV);
    const Vector energy = svd.singularValues().cwiseAbs2();
    const double total = energy.sum();
    if (total <= 0.0) {
        return Matrix(activations.cols(), 0);
    }
    Index k = 0;
    double captured = 0.0;
    while (k < energy.size() && captured < energy_threshold * total * (1.0 - 1e-12)) {
        captured += energy(k);
        ++k;
    }
    return svd.matrixV().leftCols(k);
}

std::vector<Matrix> gpm_collect_bases(const Model& model, const LabeledDataset& head, double energy_threshold,
                                      Index max_samples, std::uint64_t seed) {
    require(max_samples >= 1, ErrorCode::Domain, "gpm max_samples must be >= 1");
    require(!head.empty(), ErrorCode::Domain, "empty activation matrix");
    std::vector<Index> rows;
    if (head.size() > max_samples) {
        Rng rng(seed);
        for (auto r : rng.sample_without_replacement(static_cast<std::size_t>(head.size()),
                                                     static_cast<std::size_t>(max_samples))) {
            rows.push_back(static_cast<Index>(r));
        }
        std::sort(rows.begin(), rows.end());
    } else {
        for (Index i = 0; i < head.size(); ++i) {
            rows.push_back(i);
        }
    }
    const auto sample = head.subset(rows);
    const auto pass = mlp_forward_backward(model, sample.features(), sample.labels(), LossSpec{});
    std::vector<Matrix> bases;
    for (const auto& inputs : pass.layer_inputs) {
        bases.push_back(gpm_basis(inputs, energy_threshold));
    }
    return bases;
}

RowMatrix gpm_project(const RowMatrix& layer_gradient, const Matrix& basis) {
    if (basis.cols() == 0) {
        return layer_gradient;
    }
    require(layer_gradient.cols() == basis.rows(), ErrorCode::Shape,
            "gradient fan-in " + std::to_string(layer_gradient.cols()) + " != basis dimension " +
                std::to_string(basis.rows()));
    if (basis.cols() >= basis.rows()) {
        // basis spans the whole input space
        return RowMatrix::Zero(layer_gradient.rows(), layer_gradient.cols());
    }
    // Second pass removes the in-span rounding residue of the first, which
    // dominates when most of the gradient lies inside the basis.
    RowMatrix out = layer_gradient - (layer_gradient * basis) * basis.transpose();
    out -= (out * basis) * basis.transpose();
    return out;
}

void gpm_project_all(const ParamLayout& layout, const std::vector<Matrix>& bases, Vector& gradient) {
    require(static_cast<int>(bases.size()) == layout.n_layers(), ErrorCode::Shape, "one basis per layer required");
    for (int l = 0; l < layout.n_layers(); ++l) {
        const auto& basis = bases[static_cast<std::size_t>(l)];
        if (basis.cols() == 0) {
            continue;
        }
        const auto& s = layout.weight_segment(l);
        Eigen::Map<RowMatrix> g(gradient.data() + s.offset, s.rows, s.cols);
        const RowMatrix projected = gpm_project(g, basis);
        g = projected;
    }
}

StrategyState prepare_state(const StrategyParams& params, const Model& head_model, const HeadTailSplit& split,
                            std::uint64_t seed) {
    params.validate();
    StrategyState state;
    state.variant = params.variant;
    state.cl_weight = params.cl_weight;
    state.temperature = params.temperature;
    state.head_classes = split.head_classes;
    switch (params.variant) {
        case Strategy::Naive:
            break;
        case Strategy::Ewc:
        case Strategy::ModifiedEwc:
            state.anchor = head_model.params().values();
            state.fisher = fisher_diagonal(
                head_model, split.head,
                params.variant == Strategy::Ewc ? FisherMode::ModelSampled : FisherMode::TrueLoss,
                params.fisher_max_samples, seed);
            break;
        case Strategy::Lwf:
            state.teacher = head_model;
            break;
        case Strategy::Gpm:
            state.bases = gpm_collect_bases(head_model, split.head, params.energy_threshold, params.gpm_max_samples, seed);
            break;
    }
    return state;
}

namespace {

double orthonormality_error(const Matrix& basis) {
    if (basis.cols() == 0) {
        return 0.0;
    }
    return (basis.transpose() * basis - Matrix::Identity(basis.cols(), basis.cols())).cwiseAbs().maxCoeff();
}

}  // namespace

PhaseResult continue_from_head(const Model& head_model, const TrainTrace& head_trace, const HeadTailSplit& split,
                               const LabeledDataset& test, const TwoPhaseConfig& config) {
    require(!split.tail.empty(), ErrorCode::Domain, "phase 2 needs a non-empty tail");
    const auto& params = config.strategy;
    const auto state = prepare_state(params, head_model, split, config.seed);

    PhaseResult result;
    result.variant = params.variant;
    result.model_after_head = head_model;
    result.head_trace = head_trace;

    TrainHooks hooks;
    RowMatrix teacher_logits;
    kernels::LogitTerm distill;
    GpmAudit audit;
    switch (params.variant) {
        case Strategy::Naive:
            break;
        case Strategy::Ewc:
        case Strategy::ModifiedEwc:
            hooks.penalty = [&state](const Vector& theta, Vector& grad) { return ewc_penalty(theta, state, &grad); };
            break;
        case Strategy::Lwf:
            teacher_logits = logits(*state.teacher, split.tail.features());
            distill = make_distillation_term(teacher_logits, state.head_classes, state.temperature, state.cl_weight);
            hooks.logit_term = &distill;
            break;
        case Strategy::Gpm: {
            for (const auto& b : state.bases) {
                audit.max_orthonormality_error = std::max(audit.max_orthonormality_error, orthonormality_error(b));
            }
            const ParamLayout layout = head_model.layout();
            hooks.step.project = [&state, layout](Vector& grad) { gpm_project_all(layout, state.bases, grad); };
            hooks.step.on_update = [&state, &audit, layout](const Vector& update) {
                ++audit.steps;
                for (int l = 0; l < layout.n_layers(); ++l) {
                    const auto& basis = state.bases[static_cast<std::size_t>(l)];
                    const auto& s = layout.weight_segment(l);
                    const Eigen::Map<const RowMatrix> dw(update.data() + s.offset, s.rows, s.cols);
                    const double norm = dw.norm();
                    if (basis.cols() == 0 || norm == 0.0) {
                        continue;
                    }
                    audit.max_in_span_ratio = std::max(audit.max_in_span_ratio, (dw * basis).norm() / norm);
                }
            };
            break;
        }
    }

    auto tail = train(head_model, split.tail, config.loss, params.phase2, hooks);
    result.model_after_tail = std::move(tail.model);
    result.tail_trace = std::move(tail.trace);
    result.metrics_before = evaluate(result.model_after_head, test);
    result.metrics_after = evaluate(result.model_after_tail, test);
    result.transfer = transfer_decomposition(result.metrics_before.per_class_accuracy,
                                             result.metrics_after.per_class_accuracy, split.head_classes);
    result.head_drop = mean_drop(result.metrics_before.per_class_accuracy, result.metrics_after.per_class_accuracy,
                                 split.head_classes);
    if (params.variant == Strategy::Gpm) {
        result.gpm_audit = audit;
    }
    return result;
}

PhaseResult run_two_phase(const HeadTailSplit& split, const LabeledDataset& test, const TwoPhaseConfig& config) {
    require(!split.tail.empty(), ErrorCode::Domain, "phase 2 needs a non-empty tail");
    require(!split.head.empty(), ErrorCode::Domain, "phase 1 needs a non-empty head");
    config.strategy.validate();
    auto head = train(config.initial, split.head, config.loss, config.phase1);
    return continue_from_head(head.model, head.trace, split, test, config);
}

}  // namespace ltcl
