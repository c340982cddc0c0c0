#include "ltcl/training.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "ltcl/error.hpp"
#include "ltcl/rng.hpp"

namespace ltcl {

void TrainConfig::validate() const {
    require(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorCode::Validation, "learning_rate must be > 0");
    require(momentum >= 0.0 && momentum < 1.0, ErrorCode::Validation, "momentum must lie in [0, 1)");
    require(epochs >= 1, ErrorCode::Validation, "epochs must be >= 1");
    require(batch_size >= 0, ErrorCode::Validation, "batch_size must be >= 0 (0 = full batch)");
    require(anneal_period >= 0, ErrorCode::Validation, "anneal_period must be >= 0");
    require(lr_min >= 0.0 && lr_min <= learning_rate, ErrorCode::Validation, "lr_min must lie in [0, learning_rate]");
    if (grad_tolerance) {
        require(*grad_tolerance > 0.0, ErrorCode::Validation, "grad_tolerance must be > 0");
    }
}

double cosine_anneal(double lr0, double lr_min, double t, double period) {
    require(period > 0.0, ErrorCode::Domain, "cosine period must be > 0");
    require(t >= 0.0, ErrorCode::Domain, "schedule step must be >= 0");
    if (t > period) {
        fail(ErrorCode::ScheduleExhausted, "schedule step beyond the annealing period");
    }
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t / period));
}

double learning_rate_at(const TrainConfig& config, int epoch) {
    if (config.schedule == ScheduleKind::Constant) {
        return config.learning_rate;
    }
    const int period = config.anneal_period == 0 ? config.epochs : config.anneal_period;
    return cosine_anneal(config.learning_rate, config.lr_min, epoch, period);
}

TrainTrace optimize(Vector& theta, Index n_samples, const BatchObjective& objective, const TrainConfig& config,
                    const StepHooks& hooks) {
    config.validate();
    require(n_samples > 0, ErrorCode::Domain, "training on an empty dataset");
    const bool full_batch = config.batch_size == 0 || config.batch_size >= n_samples;
    const Index batch = full_batch ? n_samples : config.batch_size;

    Rng rng(config.seed);
    std::vector<Index> order(static_cast<std::size_t>(n_samples));
    std::iota(order.begin(), order.end(), Index{0});
    Vector velocity = Vector::Zero(theta.size());
    Vector grad(theta.size());
    TrainTrace trace;

    auto check_finite = [&](double value, int epoch) {
        if (!std::isfinite(value) || !grad.allFinite()) {
            throw DivergenceError(epoch, "training diverged at epoch " + std::to_string(epoch));
        }
    };

    for (int epoch = 0; epoch < config.epochs && !trace.converged; ++epoch) {
        const double lr = learning_rate_at(config, epoch);
        if (!full_batch) {
            rng.shuffle(order);
        }
        double loss_sum = 0.0;
        int n_batches = 0;
        for (Index start = 0; start < n_samples; start += batch) {
            const Index len = std::min(batch, n_samples - start);
            const std::span<const Index> rows =
                full_batch ? std::span<const Index>{} : std::span<const Index>(order.data() + start, static_cast<std::size_t>(len));
            grad.setZero();
            const double value = objective(theta, rows, grad);
            check_finite(value, epoch);
            if (full_batch && config.grad_tolerance && grad.norm() <= *config.grad_tolerance) {
                trace.converged = true;
                trace.epoch_losses.push_back(value);
                break;
            }
            if (hooks.project) {
                hooks.project(grad);
            }
            velocity = config.momentum * velocity - lr * grad;
            theta += velocity;
            if (hooks.on_update) {
                hooks.on_update(velocity);
            }
            loss_sum += value;
            ++n_batches;
        }
        trace.epochs_run = epoch + 1;
        if (trace.converged) {
            break;
        }
        trace.epoch_losses.push_back(loss_sum / n_batches);
        if (!full_batch && config.grad_tolerance) {
            grad.setZero();
            check_finite(objective(theta, {}, grad), epoch);
            trace.converged = grad.norm() <= *config.grad_tolerance;
        }
    }
    grad.setZero();
    check_finite(objective(theta, {}, grad), trace.epochs_run);
    trace.final_grad_norm = grad.norm();
    return trace;
}

TrainResult train(const Model& model, const LabeledDataset& dataset, const LossSpec& spec, const TrainConfig& config,
                  const TrainHooks& hooks) {
    require(!dataset.empty(), ErrorCode::Domain, "training on an empty dataset");
    require(spec.mu >= 0.0, ErrorCode::Domain, "mu must be >= 0");
    Model work = model;
    auto objective = [&](const Vector& theta, std::span<const Index> rows, Vector& grad) {
        work.params().values() = theta;
        auto term = kernels::cross_entropy(work, dataset.features(), dataset.labels(), rows, hooks.logit_term);
        double value = term.loss + 0.5 * spec.mu * theta.squaredNorm();
        grad = std::move(term.gradient) + spec.mu * theta;
        if (hooks.penalty) {
            value += hooks.penalty(theta, grad);
        }
        return value;
    };
    Vector theta = model.params().values();
    auto trace = optimize(theta, dataset.size(), objective, config, hooks.step);
    work.params().values() = theta;
    return {std::move(work), std::move(trace)};
}

namespace {

// Solves H p = -g approximately; H is applied through `hv`.
Vector preconditioned_cg(const std::function<Vector(const Vector&)>& hv, const Vector& g, const Vector& inv_diag,
                         double tolerance, int max_iterations) {
    Vector p = Vector::Zero(g.size());
    Vector r = -g;
    Vector z = inv_diag.cwiseProduct(r);
    Vector d = z;
    double rz = r.dot(z);
    for (int k = 0; k < max_iterations && r.norm() > tolerance; ++k) {
        const Vector hd = hv(d);
        const double curvature = d.dot(hd);
        if (curvature <= 0.0) {
            break;
        }
        const double alpha = rz / curvature;
        p += alpha * d;
        r -= alpha * hd;
        z = inv_diag.cwiseProduct(r);
        const double rz_next = r.dot(z);
        d = z + (rz_next / rz) * d;
        rz = rz_next;
    }
    return p;
}

}  // namespace

TrainResult minimize_to_stationarity(const Model& model, const LabeledDataset& dataset, const LossSpec& spec,
                                     const NewtonOptions& options) {
    require(model.kind() == ModelKind::Linear, ErrorCode::UnsupportedModel,
            "Newton stationarity solver needs the linear model");
    require(spec.mu > 0.0, ErrorCode::DegenerateConvexity, "stationarity solver needs mu > 0");
    Model work = model;
    TrainTrace trace;
    auto current = loss_and_gradient(work, dataset, spec);
    for (int it = 0; it < options.max_iterations; ++it) {
        trace.epoch_losses.push_back(current.loss);
        const double gnorm = current.gradient.norm();
        trace.final_grad_norm = gnorm;
        trace.epochs_run = it;
        if (!std::isfinite(current.loss) || !current.gradient.allFinite()) {
            throw DivergenceError(it, "Newton iteration produced a non-finite loss");
        }
        if (gnorm <= options.grad_tolerance) {
            trace.converged = true;
            break;
        }
        const Vector inv_diag = hessian_diagonal(work, dataset, spec).cwiseInverse();
        const double forcing = std::min(0.5, std::sqrt(gnorm));
        const Vector step = preconditioned_cg(
            [&](const Vector& v) { return hessian_vector(work, dataset, spec, v); }, current.gradient, inv_diag,
            forcing * gnorm, options.max_cg_iterations);
        const double slope = current.gradient.dot(step);

        const Vector theta = work.params().values();
        double t = 1.0;
        bool accepted = false;
        LossAndGradient trial;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            work.params().values() = theta + t * step;
            trial = loss_and_gradient(work, dataset, spec);
            const bool armijo = trial.loss <= current.loss + 1e-4 * t * slope;
            // Near the optimum loss differences drown in rounding; accept a
            // step that clearly shrinks the gradient without raising the loss.
            const bool stalls_in_rounding = trial.gradient.norm() <= 0.5 * gnorm &&
                                            trial.loss <= current.loss + 1e-13 * std::abs(current.loss);
            if (std::isfinite(trial.loss) && (armijo || stalls_in_rounding)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            work.params().values() = theta;
            break;
        }
        current = std::move(trial);
    }
    if (!trace.converged) {
        trace.final_grad_norm = current.gradient.norm();
        trace.converged = trace.final_grad_norm <= options.grad_tolerance;
    }
    return {std::move(work), std::move(trace)};
}

}  // namespace ltcl
