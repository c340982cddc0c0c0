#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltcl/kernels.hpp"
#include "ltcl/models.hpp"

namespace ltcl {

enum class ScheduleKind { Constant, Cosine };

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.0;
    ScheduleKind schedule = ScheduleKind::Constant;
    // Cosine period in epochs; 0 means "epochs".
    int anneal_period = 0;
    double lr_min = 0.0;
    int epochs = 1;
    // 0 selects full-batch gradient descent.
    Index batch_size = 0;
    std::uint64_t seed = 0;
    // Train-to-stationarity: stop once the full gradient norm reaches this value.
    std::optional<double> grad_tolerance;

    void validate() const;
};

struct TrainTrace {
    std::vector<double> epoch_losses;
    double final_grad_norm = 0.0;
    int epochs_run = 0;
    bool converged = false;
};

/// lr_min + (lr0 - lr_min)(1 + cos(pi t / T)) / 2 for 0 <= t <= T.
double cosine_anneal(double lr0, double lr_min, double t, double period);

/// Learning rate used during `epoch` (0-based).
double learning_rate_at(const TrainConfig& config, int epoch);

/// Loss and gradient of a batch; `rows` empty means the whole dataset.
using BatchObjective = std::function<double(const Vector& theta, std::span<const Index> rows, Vector& grad)>;

struct StepHooks {
    // Rewrites the gradient before the optimizer consumes it.
    std::function<void(Vector& grad)> project;
    // Observes each applied parameter change.
    std::function<void(const Vector& update)> on_update;
};

/// Heavy-ball SGD: velocity = momentum * velocity - lr * grad; theta += velocity.
/// Batch order is a seeded shuffle per epoch. Throws DivergenceError on a
/// non-finite loss or gradient.
TrainTrace optimize(Vector& theta, Index n_samples, const BatchObjective& objective, const TrainConfig& config,
                    const StepHooks& hooks = {});

struct TrainHooks {
    const kernels::LogitTerm* logit_term = nullptr;
    // Additive penalty on theta; returns its value and adds its gradient.
    std::function<double(const Vector& theta, Vector& grad)> penalty;
    StepHooks step;
};

struct TrainResult {
    Model model;
    TrainTrace trace;
};

/// Trains a copy of `model` on the regularised cross-entropy (+ hooks).
TrainResult train(const Model& model, const LabeledDataset& dataset, const LossSpec& spec, const TrainConfig& config,
                  const TrainHooks& hooks = {});

struct NewtonOptions {
    double grad_tolerance = 1e-8;
    int max_iterations = 100;
    int max_cg_iterations = 5000;
};

/// Full-batch truncated Newton (Jacobi-preconditioned CG on exact Hessian-vector
/// products, Armijo backtracking) for the strongly convex linear model. Used to
/// certify minimizers for the bound experiments.
TrainResult minimize_to_stationarity(const Model& model, const LabeledDataset& dataset, const LossSpec& spec,
                                     const NewtonOptions& options = {});

}  // namespace ltcl
