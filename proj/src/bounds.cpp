#include "ltcl/bounds.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <ostream>

#include "ltcl/csv.hpp"
#include "ltcl/error.hpp"
#include "ltcl/rng.hpp"

namespace ltcl {

double lemma1_bound(double delta, double mu_f, double mu_g) {
    require(delta >= 0.0, ErrorCode::Domain, "delta must be >= 0");
    if (!(mu_f + mu_g > 0.0)) {
        fail(ErrorCode::DegenerateConvexity, "mu_f + mu_g must be > 0");
    }
    return 4.0 * delta / (mu_f + mu_g);
}

double tight_bound(const TightBoundTerms& t, double mu_f, double mu_g) {
    if (!(mu_f + mu_g > 0.0)) {
        fail(ErrorCode::DegenerateConvexity, "mu_f + mu_g must be > 0");
    }
    const double bracket = (t.head_at_full - t.full_at_full) + (t.full_at_head - t.head_at_head);
    if (bracket < -kBoundSlack) {
        fail(ErrorCode::MinimizerCertification,
             "tight-bound bracket is negative (" + csv::num(bracket) + "); inputs are not minimizers");
    }
    return std::sqrt(2.0 * std::max(bracket, 0.0) / (mu_f + mu_g));
}

double tight_bound(const Vector& x_full, const Vector& x_head, const ScalarFunction& full, const ScalarFunction& head,
                   double mu_f, double mu_g, std::optional<double> grad_norm_full,
                   std::optional<double> grad_norm_head) {
    constexpr double kCertified = 1e-6;
    if ((grad_norm_full && *grad_norm_full > kCertified) || (grad_norm_head && *grad_norm_head > kCertified)) {
        fail(ErrorCode::MinimizerCertification, "minimizer gradient norm above 1e-6");
    }
    return tight_bound(TightBoundTerms{full(x_full), head(x_full), full(x_head), head(x_head)}, mu_f, mu_g);
}

namespace {

void require_symmetric(const Matrix& m) {
    require(m.rows() == m.cols() && m.rows() > 0, ErrorCode::Shape, "eigenvalue input must be square and non-empty");
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-8) {
        fail(ErrorCode::Symmetry, "matrix is not symmetric (max asymmetry " + csv::num(asym) + ")");
    }
}

}  // namespace

double min_eigenvalue_dense(const Matrix& symmetric) {
    require_symmetric(symmetric);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
    require(solver.info() == Eigen::Success, ErrorCode::Domain, "symmetric eigensolver did not converge");
    return solver.eigenvalues().minCoeff();
}

double min_eigenvalue_iterative(const Matrix& symmetric, double tolerance, int max_iterations) {
    require_symmetric(symmetric);
    require(tolerance > 0.0 && max_iterations >= 1, ErrorCode::Domain, "invalid eigenvalue iteration settings");
    const Index n = symmetric.rows();
    const Matrix identity = Matrix::Identity(n, n);
    // H - s I has a Cholesky factor exactly when s lies below the spectrum.
    auto below_spectrum = [&](double s) { return Eigen::LLT<Matrix>(symmetric - s * identity).info() == Eigen::Success; };

    double lo = 0.0;
    Eigen::LLT<Matrix> llt(symmetric);
    if (llt.info() != Eigen::Success) {
        double gershgorin = INFINITY;
        for (Index i = 0; i < n; ++i) {
            gershgorin = std::min(gershgorin, symmetric(i, i) - (symmetric.row(i).cwiseAbs().sum() -
                                                                 std::abs(symmetric(i, i))));
        }
        lo = gershgorin - 1e-6 * std::max(1.0, std::abs(gershgorin));
        llt.compute(symmetric - lo * identity);
        require(llt.info() == Eigen::Success, ErrorCode::Domain, "shifted factorisation failed");
    }

    // Shift-and-invert power iteration: the Rayleigh quotient is an upper bound
    // on the smallest eigenvalue and approaches it.
    Rng rng(0x5eed);
    Vector x(n);
    for (Index i = 0; i < n; ++i) {
        x(i) = rng.normal();
    }
    x.normalize();
    double hi = x.dot(symmetric * x);
    for (int k = 0; k < max_iterations; ++k) {
        x = llt.solve(x);
        x.normalize();
        const double next = x.dot(symmetric * x);
        const bool settled = std::abs(next - hi) <= 1e-3 * tolerance * std::abs(next);
        hi = std::min(hi, next);
        if (settled) {
            break;
        }
    }

    // Close the bracket (lo, hi] with factorisation tests, stepping down from
    // hi geometrically and then bisecting. Below the rounding floor of the
    // factorisation the test is no longer meaningful.
    const double floor = 64.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon() *
                         symmetric.cwiseAbs().rowwise().sum().maxCoeff();
    auto resolved = [&] { return hi - lo <= std::max(tolerance * std::abs(hi), floor); };
    double step = std::max(tolerance * std::abs(hi), floor);
    while (!resolved()) {
        const double s = hi - step;
        if (s <= lo) {
            break;
        }
        if (below_spectrum(s)) {
            lo = s;
            break;
        }
        hi = s;
        step *= 16.0;
    }
    while (!resolved()) {
        const double mid = 0.5 * (lo + hi);
        (below_spectrum(mid) ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double min_eigenvalue(const Matrix& symmetric) {
    return symmetric.rows() <= kDenseEigenLimit ? min_eigenvalue_dense(symmetric) : min_eigenvalue_iterative(symmetric);
}

double lemma2_bound(double delta, const Matrix& hessian_f, const Matrix& hessian_g) {
    require(delta >= 0.0, ErrorCode::Domain, "delta must be >= 0");
    const double lf = min_eigenvalue(hessian_f);
    const double lg = min_eigenvalue(hessian_g);
    if (lf <= 0.0 || lg <= 0.0) {
        fail(ErrorCode::StrictConvexityViolation,
             "Hessian minimum eigenvalue is not positive (" + csv::num(lf) + ", " + csv::num(lg) + ")");
    }
    return 4.0 * delta / (lf + lg);
}

double delta_hat(const Vector& x_full, const Vector& x_head, const ScalarFunction& full, const ScalarFunction& head,
                 int n_samples, std::uint64_t seed) {
    require(n_samples >= 0, ErrorCode::Domain, "sample count must be >= 0");
    auto gap = [&](const Vector& x) { return std::abs(full(x) - head(x)); };
    double best = std::max(gap(x_full), gap(x_head));
    const Vector diff = x_full - x_head;
    const double spread = diff.norm() / std::sqrt(static_cast<double>(std::max<Index>(1, diff.size())));
    Rng rng(seed);
    const int n_grid = n_samples / 2;
    for (int k = 0; k < n_grid; ++k) {
        const double t = static_cast<double>(k + 1) / (n_grid + 1);
        best = std::max(best, gap(x_head + t * diff));
    }
    for (int k = n_grid; k < n_samples; ++k) {
        Vector x = x_head + rng.uniform() * diff;
        for (Index i = 0; i < x.size(); ++i) {
            x(i) += 0.01 * spread * rng.normal();
        }
        best = std::max(best, gap(x));
    }
    return best;
}

BoundReport bound_cell(const LabeledDataset& dataset, double imbalance_factor, double mu, const BoundGridConfig& config,
                       std::uint64_t cell_seed) {
    BoundReport r;
    r.imbalance_factor = imbalance_factor;
    r.mu_full = mu;
    r.mu_head = mu;
    const auto split = head_tail_split(dataset, config.head_fraction);
    r.n_full = dataset.size();
    r.n_head = split.head.size();
    const LossSpec spec{mu};
    const Model init = make_linear(dataset.n_features(), dataset.n_classes());
    NewtonOptions newton;
    newton.grad_tolerance = config.grad_tolerance;

    const auto full = minimize_to_stationarity(init, dataset, spec, newton);
    const auto head = minimize_to_stationarity(init, split.head, spec, newton);
    r.converged_full = full.trace.converged;
    r.converged_head = head.trace.converged;
    r.grad_norm_full = full.trace.final_grad_norm;
    r.grad_norm_head = head.trace.final_grad_norm;

    const Vector& theta_full = full.model.params().values();
    const Vector& theta_head = head.model.params().values();
    r.measured_distance = (theta_full - theta_head).norm();

    Model probe = init;
    auto objective_on = [&probe, &spec](const LabeledDataset& data) {
        return [&probe, &spec, &data](const Vector& theta) {
            probe.params().values() = theta;
            return loss(probe, data, spec);
        };
    };
    const ScalarFunction f = objective_on(dataset);
    const ScalarFunction g = objective_on(split.head);

    r.delta_hat = delta_hat(theta_full, theta_head, f, g, config.delta_samples, cell_seed);
    r.loose_bound = std::sqrt(lemma1_bound(r.delta_hat, r.mu_full, r.mu_head));
    r.holds_loose = r.measured_distance <= r.loose_bound + kBoundSlack;
    r.tight_bound = tight_bound(theta_full, theta_head, f, g, r.mu_full, r.mu_head, r.grad_norm_full, r.grad_norm_head);
    r.holds_tight = r.measured_distance <= r.tight_bound + kBoundSlack;

    if (config.lemma2) {
        const Matrix hf = hessian(full.model, dataset, spec);
        const Matrix hg = hessian(head.model, split.head, spec);
        r.lambda_full = min_eigenvalue(hf);
        r.lambda_head = min_eigenvalue(hg);
        r.lemma2_bound = std::sqrt(lemma2_bound(r.delta_hat, hf, hg));
        r.holds_lemma2 = r.measured_distance <= *r.lemma2_bound + kBoundSlack;
    }
    if (!r.converged_full || !r.converged_head) {
        r.failed = true;
        r.failure = "training did not reach the gradient tolerance";
    }
    return r;
}

std::vector<BoundReport> bound_grid(const DatasetBuilder& builder, std::vector<double> imbalance_factors,
                                    std::vector<double> mus, const BoundGridConfig& config) {
    require(!imbalance_factors.empty() && !mus.empty(), ErrorCode::Validation, "bound grid needs IF and mu values");
    std::sort(imbalance_factors.begin(), imbalance_factors.end());
    std::sort(mus.begin(), mus.end());

    std::vector<LabeledDataset> datasets;
    for (double f : imbalance_factors) {
        datasets.push_back(builder(f));
    }
    const auto n_mu = mus.size();
    const auto n_cells = imbalance_factors.size() * n_mu;
    std::vector<BoundReport> reports(n_cells);
    Rng seeder(config.seed);
    std::vector<std::uint64_t> cell_seeds(n_cells);
    for (auto& s : cell_seeds) {
        s = seeder.next_u64();
    }

#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, config.workers))
    for (std::size_t k = 0; k < n_cells; ++k) {
        const double f = imbalance_factors[k / n_mu];
        const double mu = mus[k % n_mu];
        try {
            reports[k] = bound_cell(datasets[k / n_mu], f, mu, config, cell_seeds[k]);
        } catch (const std::exception& e) {
            BoundReport failed;
            failed.imbalance_factor = f;
            failed.mu_full = mu;
            failed.mu_head = mu;
            failed.failed = true;
            failed.failure = e.what();
            reports[k] = std::move(failed);
        }
    }
    return reports;
}

void write_bound_csv(std::ostream& out, const std::vector<BoundReport>& reports) {
    out << "if,mu,measured_distance,delta_hat,loose_bound,tight_bound,lemma2_bound,holds_tight,holds_loose,"
           "converged_full,converged_head\n";
    for (const auto& r : reports) {
        csv::row(out, {csv::num(r.imbalance_factor), csv::num(r.mu_full), csv::num(r.measured_distance),
                       csv::num(r.delta_hat), csv::num(r.loose_bound), csv::num(r.tight_bound),
                       r.lemma2_bound ? csv::num(*r.lemma2_bound) : std::string{}, csv::flag(r.holds_tight),
                       csv::flag(r.holds_loose), csv::flag(r.converged_full), csv::flag(r.converged_head)});
    }
}

}  // namespace ltcl
