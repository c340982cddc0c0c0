#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ltcl/datasets.hpp"
#include "ltcl/models.hpp"
#include "ltcl/training.hpp"

namespace ltcl {

/// Squared-distance bound 4 delta / (mu_f + mu_g) between the minimizers of two
/// strongly convex functions that differ by at most delta.
double lemma1_bound(double delta, double mu_f, double mu_g);

struct TightBoundTerms {
    double full_at_full = 0.0;  // f(x_f)
    double head_at_full = 0.0;  // g(x_f)
    double full_at_head = 0.0;  // f(x_g)
    double head_at_head = 0.0;  // g(x_g)
};

/// Distance bound sqrt(2 [(g(x_f) - f(x_f)) + (f(x_g) - g(x_g))] / (mu_f + mu_g)),
/// evaluated at the two minimizers before any maximisation over delta. Throws
/// MinimizerCertification when the bracket is below -1e-9.
double tight_bound(const TightBoundTerms& terms, double mu_f, double mu_g);

using ScalarFunction = std::function<double(const Vector&)>;

/// Same bound from the two objectives and their minimizers. When gradient
/// norms are supplied they must both be <= 1e-6.
double tight_bound(const Vector& x_full, const Vector& x_head, const ScalarFunction& full, const ScalarFunction& head,
                   double mu_f, double mu_g, std::optional<double> grad_norm_full = std::nullopt,
                   std::optional<double> grad_norm_head = std::nullopt);

/// 4 delta / (lambda_f + lambda_g) with lambda the smallest Hessian eigenvalues.
double lemma2_bound(double delta, const Matrix& hessian_f, const Matrix& hessian_g);

inline constexpr Index kDenseEigenLimit = 512;

/// Smallest eigenvalue of a symmetric matrix: dense decomposition up to
/// kDenseEigenLimit, shift-and-invert power iteration above.
double min_eigenvalue(const Matrix& symmetric);
double min_eigenvalue_dense(const Matrix& symmetric);

/// Shift-and-invert power iteration for an upper estimate, then Cholesky
/// tests of H - sI to bracket the eigenvalue within `tolerance` (relative).
double min_eigenvalue_iterative(const Matrix& symmetric, double tolerance = 1e-9, int max_iterations = 200);

struct BoundReport {
    double imbalance_factor = 0.0;
    double mu_full = 0.0;
    double mu_head = 0.0;
    double measured_distance = 0.0;
    double delta_hat = 0.0;
    double loose_bound = 0.0;
    double tight_bound = 0.0;
    std::optional<double> lemma2_bound;
    std::optional<double> lambda_full;
    std::optional<double> lambda_head;
    bool holds_tight = false;
    bool holds_loose = false;
    std::optional<bool> holds_lemma2;
    bool converged_full = false;
    bool converged_head = false;
    double grad_norm_full = 0.0;
    double grad_norm_head = 0.0;
    Index n_full = 0;
    Index n_head = 0;
    bool failed = false;
    std::string failure;
};

inline constexpr double kBoundSlack = 1e-9;

struct BoundGridConfig {
    double head_fraction = 0.6;
    double grad_tolerance = 1e-8;
    int delta_samples = 64;
    bool lemma2 = false;
    std::uint64_t seed = 0;
    int workers = 1;
};

using DatasetBuilder = std::function<LabeledDataset(double imbalance_factor)>;

/// Largest |f - g| over both minimizers and `n_samples` seeded points on or near
/// the segment between them.
double delta_hat(const Vector& x_full, const Vector& x_head, const ScalarFunction& full, const ScalarFunction& head,
                 int n_samples, std::uint64_t seed);

/// One cell: builds the dataset, trains both minimizers to stationarity and
/// evaluates every bound.
BoundReport bound_cell(const LabeledDataset& dataset, double imbalance_factor, double mu, const BoundGridConfig& config,
                       std::uint64_t cell_seed);

/// Cells ordered by (IF, mu); independent cells run on `config.workers` threads.
std::vector<BoundReport> bound_grid(const DatasetBuilder& builder, std::vector<double> imbalance_factors,
                                    std::vector<double> mus, const BoundGridConfig& config);

void write_bound_csv(std::ostream& out, const std::vector<BoundReport>& reports);

}  // namespace ltcl
