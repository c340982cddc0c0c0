#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/SVD>

#include "ltcl/continual.hpp"
#include "ltcl/error.hpp"

using namespace ltcl;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
    const Vector v = testutil::random_vector(rows * cols, seed);
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Matrix orthonormal_columns(Index n, Index k, std::uint64_t seed) {
    Eigen::HouseholderQR<Matrix> qr(random_matrix(n, k, seed));
    return qr.householderQ() * Matrix::Identity(n, k);
}

// Classes 0..3 at 3 e_c in R^4, long-tailed, first two classes form the head.
struct Fixture {
    HeadTailSplit split;
    LabeledDataset test;
    TwoPhaseConfig config;

    Fixture() {
        const auto base = synthetic_gaussian(4, 4, 300, 3.0, 1);
        split = head_tail_split(make_longtail(base, 3.0, 2), 0.5);
        test = synthetic_gaussian(4, 4, 200, 3.0, 3);
        config.initial = make_mlp({4, 16, 4}, 4);
        config.loss = LossSpec{1e-4};
        config.phase1.learning_rate = 0.05;
        config.phase1.momentum = 0.9;
        config.phase1.epochs = 10;
        config.phase1.batch_size = 32;
    }

    StrategyParams params(Strategy s) const {
        auto p = default_strategy_params(s, 32, 5);
        p.phase2.epochs = std::min(p.phase2.epochs, 20);
        p.phase2.anneal_period = 0;
        return p;
    }
};

}  // namespace

TEST_CASE("strategy names and defaults") {
    for (auto s : {Strategy::Naive, Strategy::Ewc, Strategy::ModifiedEwc, Strategy::Lwf, Strategy::Gpm}) {
        CHECK(parse_strategy(to_string(s)) == s);
    }
    CHECK_FALSE(parse_strategy("replay").has_value());

    const auto lwf = default_strategy_params(Strategy::Lwf);
    CHECK(lwf.phase2.learning_rate == 0.001);
    CHECK(lwf.phase2.momentum == 0.9);
    CHECK(lwf.cl_weight == 0.01);
    CHECK(lwf.phase2.epochs == 5);
    const auto ewc = default_strategy_params(Strategy::Ewc);
    CHECK(ewc.phase2.learning_rate == 0.01);
    CHECK(ewc.phase2.momentum == 0.9);
    CHECK(ewc.cl_weight == 10.0);
    CHECK(ewc.phase2.epochs == 90);
    const auto mewc = default_strategy_params(Strategy::ModifiedEwc);
    CHECK(mewc.cl_weight == 1000.0);
    CHECK(mewc.phase2.epochs == 90);
    const auto gpm = default_strategy_params(Strategy::Gpm);
    CHECK(gpm.phase2.learning_rate == 0.001);
    CHECK(gpm.phase2.momentum == 0.0);
    CHECK(gpm.phase2.schedule == ScheduleKind::Cosine);
    CHECK(gpm.phase2.epochs == 100);
    CHECK(gpm.energy_threshold == 0.97);
    CHECK(default_strategy_params(Strategy::Naive).cl_weight == 0.0);
    CHECK(default_strategy_params(Strategy::Naive, 64).phase2.batch_size == 64);

    auto bad = lwf;
    bad.temperature = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = gpm;
    bad.energy_threshold = 1.5;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("fisher diagonal") {
    SUBCASE("true-loss fisher against a per-sample loop") {
        const auto ds = testutil::random_dataset(20, 3, 3, 1);
        const auto m = make_mlp({3, 5, 3}, 2);
        const Vector f = fisher_diagonal(m, ds, FisherMode::TrueLoss, 2000);
        Vector oracle = Vector::Zero(m.params().size());
        for (Index i = 0; i < ds.size(); ++i) {
            const std::vector<Index> row{i};
            const auto one = ds.subset(row);
            oracle += gradient(m, one, LossSpec{0.0}).array().square().matrix();
        }
        oracle /= 20.0;
        CHECK((f - oracle).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK(f.minCoeff() >= 0.0);
    }
    SUBCASE("a confident correct model has no fisher mass") {
        RowMatrix x(1, 2);
        x << 1.0, 1.0;
        const LabeledDataset ds(x, {0}, 2);
        auto m = make_linear(2, 2);
        m.params().bias(0) << 40.0, -40.0;
        const Vector sampled = fisher_diagonal(m, ds, FisherMode::ModelSampled, 10, 3);
        const Vector truth = fisher_diagonal(m, ds, FisherMode::TrueLoss, 10, 3);
        CHECK(sampled.cwiseAbs().maxCoeff() <= 1e-30);
        CHECK((sampled - truth).cwiseAbs().maxCoeff() <= 1e-30);
    }
    SUBCASE("subsample is seeded") {
        const auto ds = testutil::random_dataset(100, 4, 3, 4);
        const auto m = make_mlp({4, 6, 3}, 5);
        const Vector a = fisher_diagonal(m, ds, FisherMode::ModelSampled, 30, 9);
        CHECK(a == fisher_diagonal(m, ds, FisherMode::ModelSampled, 30, 9));
        CHECK(a != fisher_diagonal(m, ds, FisherMode::ModelSampled, 30, 10));
        CHECK_THROWS_AS(fisher_diagonal(m, ds, FisherMode::TrueLoss, 0), Error);
    }
}

TEST_CASE("ewc penalty") {
    StrategyState st;
    st.variant = Strategy::Ewc;
    st.cl_weight = 2.0;
    st.anchor = Vector::Zero(3);
    st.fisher = Vector::Ones(3);
    CHECK(ewc_penalty(st.anchor, st) == 0.0);
    const Vector theta = Vector::Ones(3);  // squared distance 3
    CHECK(ewc_penalty(theta, st) == doctest::Approx(3.0).epsilon(1e-15));

    st.fisher << 0.5, 1.0, 2.0;
    Vector grad = Vector::Zero(3);
    const Vector t = testutil::random_vector(3, 1);
    ewc_penalty(t, st, &grad);
    const Vector fd = testutil::numeric_gradient([&](const Vector& v) { return ewc_penalty(v, st); }, t);
    CHECK(testutil::relative_error(grad, fd) <= 1e-8);

    CHECK_THROWS_AS(ewc_penalty(Vector::Zero(2), st), Error);
    st.variant = Strategy::Lwf;
    CHECK_THROWS_AS(ewc_penalty(theta, st), Error);
}

TEST_CASE("lwf loss") {
    RowMatrix student(1, 2);
    student << std::log(3.0), 0.0;
    const RowMatrix teacher = RowMatrix::Zero(1, 2);
    const std::vector<int> labels{0};
    const auto l = lwf_loss(student, teacher, labels, 1.0, 1.0);
    const double kl = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
    CHECK(l.distillation == doctest::Approx(kl).epsilon(1e-14));
    CHECK(l.distillation == doctest::Approx(0.14384).epsilon(1e-4));
    CHECK(l.cross_entropy == doctest::Approx(-std::log(0.75)).epsilon(1e-14));
    CHECK(l.total == doctest::Approx(l.cross_entropy + kl).epsilon(1e-14));

    const auto zero = lwf_loss(student, teacher, labels, 1.0, 0.0);
    CHECK(zero.total == zero.cross_entropy);
    const auto same = lwf_loss(student, student, labels, 2.0, 5.0);
    CHECK(std::abs(same.distillation) <= 1e-15);
    CHECK(same.total == doctest::Approx(same.cross_entropy).epsilon(1e-14));
    // T^2 scaling
    const auto hot = lwf_loss(student, teacher, labels, 2.0, 1.0);
    CHECK(hot.total == doctest::Approx(hot.cross_entropy + 4.0 * hot.distillation).epsilon(1e-14));

    CHECK_THROWS_AS(lwf_loss(student, teacher, labels, 0.0, 1.0), Error);
    CHECK_THROWS_AS(lwf_loss(student, RowMatrix::Zero(2, 2), labels, 1.0, 1.0), Error);
}

TEST_CASE("distillation term gradient") {
    const auto ds = testutil::random_dataset(40, 3, 4, 6);
    const auto student = make_mlp({3, 6, 4}, 7);
    const auto teacher = make_mlp({3, 6, 4}, 8);
    const RowMatrix teacher_logits = logits(teacher, ds.features());
    const auto term = make_distillation_term(teacher_logits, {0, 1, 2}, 2.0, 0.3);
    const auto out = kernels::cross_entropy(student, ds.features(), ds.labels(), {}, &term);
    const Vector fd = testutil::numeric_gradient(
        [&](const Vector& t) {
            Model p = student;
            p.params().values() = t;
            return kernels::cross_entropy(p, ds.features(), ds.labels(), {}, &term, false).loss;
        },
        student.params().values());
    CHECK(testutil::relative_error(out.gradient, fd) <= 1e-6);

    // Agrees with lwf_loss on the full batch.
    const RowMatrix z = logits(student, ds.features());
    const std::vector<int> head{0, 1, 2};
    CHECK(out.loss == doctest::Approx(lwf_loss(z, teacher_logits, ds.labels(), 2.0, 0.3, head).total).epsilon(1e-12));
}

TEST_CASE("gpm basis") {
    SUBCASE("rank one") {
        Vector v(4);
        v << 1.0, -2.0, 0.5, 3.0;
        Matrix acts = v.transpose().replicate(10, 1);
        const Matrix m = gpm_basis(acts, 0.97);
        REQUIRE(m.cols() == 1);
        CHECK(std::abs(std::abs(m.col(0).dot(v.normalized())) - 1.0) <= 1e-12);
    }
    SUBCASE("full energy recovers the rank") {
        for (Index r : {1, 3, 5}) {
            const Matrix acts = random_matrix(40, r, 20 + static_cast<std::uint64_t>(r)) * random_matrix(r, 8, 30);
            CHECK(gpm_basis(acts, 1.0).cols() == r);
        }
    }
    SUBCASE("threshold against a prefix-sum oracle") {
        const Matrix acts = random_matrix(100, 8, 40);
        Eigen::JacobiSVD<Matrix> svd(acts);
        const Vector s2 = svd.singularValues().array().square();
        const double total = s2.sum();
        Index k = 0;
        double acc = 0.0;
        while (acc < 0.9 * total) {
            acc += s2(k++);
        }
        const Matrix m = gpm_basis(acts, 0.9);
        CHECK(m.cols() == k);
        CHECK((m.transpose() * m - Matrix::Identity(k, k)).cwiseAbs().maxCoeff() <= 1e-8);
    }
    SUBCASE("zero activations give an empty basis") { CHECK(gpm_basis(Matrix::Zero(5, 3), 0.9).cols() == 0); }
    SUBCASE("errors") {
        CHECK_THROWS_AS(gpm_basis(Matrix(0, 3), 0.9), Error);
        CHECK_THROWS_AS(gpm_basis(Matrix::Ones(3, 3), 0.0), Error);
    }
}

TEST_CASE("gpm projection") {
    const RowMatrix g = random_matrix(3, 6, 50);
    CHECK(gpm_project(g, Matrix(6, 0)) == g);
    const Matrix m = orthonormal_columns(6, 2, 51);
    const RowMatrix inside = random_matrix(3, 2, 52) * m.transpose();
    CHECK(gpm_project(inside, m).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(gpm_project(g, orthonormal_columns(6, 6, 53)).isZero(0.0));
    // nearly in-span gradient: the remainder must still be orthogonal to M
    const RowMatrix almost = inside + 1e-9 * random_matrix(3, 6, 54);
    const RowMatrix rest = gpm_project(almost, m);
    CHECK((rest * m).norm() <= 1e-6 * rest.norm());
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Matrix basis = orthonormal_columns(10, 4, 60 + s);
        const RowMatrix gr = random_matrix(1, 10, 80 + s);
        const RowMatrix p = gpm_project(gr, basis);
        const RowMatrix kept = gr * basis * basis.transpose();
        CHECK((p * basis).norm() <= 1e-10);
        CHECK(std::abs(gr.squaredNorm() - (kept.squaredNorm() + p.squaredNorm())) <= 1e-8);
    }
    CHECK_THROWS_AS(gpm_project(random_matrix(2, 5, 1), m), Error);
}

TEST_CASE("gpm collected bases") {
    const auto ds = testutil::random_dataset(200, 5, 3, 70);
    const auto model = make_mlp({5, 12, 3}, 71);
    const auto bases = gpm_collect_bases(model, ds, 0.97, 100, 3);
    REQUIRE(bases.size() == 2);
    CHECK(bases[0].rows() == 5);
    CHECK(bases[1].rows() == 12);
    for (const auto& m : bases) {
        CHECK((m.transpose() * m - Matrix::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff() <= 1e-8);
    }
    Vector grad = testutil::random_vector(model.params().size(), 72);
    const Vector orig = grad;
    gpm_project_all(model.layout(), bases, grad);
    ParamVector pg(model.layout(), grad);
    ParamVector po(model.layout(), orig);
    for (int l = 0; l < 2; ++l) {
        CHECK((RowMatrix(pg.weight(l)) * bases[static_cast<std::size_t>(l)]).norm() <= 1e-10);
        CHECK(pg.bias(l) == po.bias(l));
    }
    CHECK_THROWS_AS(gpm_collect_bases(model, LabeledDataset(RowMatrix(0, 5), {}, 3), 0.97, 10), Error);
}

TEST_CASE("two-phase on an overlapping synthetic fixture") {
    Fixture fx;
    std::map<Strategy, PhaseResult> results;
    for (auto s : {Strategy::Naive, Strategy::Ewc, Strategy::ModifiedEwc, Strategy::Lwf, Strategy::Gpm}) {
        fx.config.strategy = fx.params(s);
        fx.config.seed = 9;
        results.emplace(s, run_two_phase(fx.split, fx.test, fx.config));
    }
    const double naive_drop = results.at(Strategy::Naive).head_drop;
    // head_drop is a fraction; 0.2 is twenty points
    CHECK(naive_drop > 0.2);
    for (auto s : {Strategy::Ewc, Strategy::ModifiedEwc, Strategy::Lwf, Strategy::Gpm}) {
        INFO(to_string(s));
        CHECK(results.at(s).head_drop < naive_drop);
    }
    for (const auto& [s, r] : results) {
        CHECK(r.metrics_before.per_class_accuracy.size() == 4);
        CHECK(r.transfer.per_class_region.size() == 4);
        // Head and tail start from the same phase-1 model in every strategy.
        CHECK(r.model_after_head.params().values() == results.at(Strategy::Naive).model_after_head.params().values());
    }
    const auto& gpm = results.at(Strategy::Gpm);
    REQUIRE(gpm.gpm_audit.has_value());
    CHECK(gpm.gpm_audit->steps > 0);
    CHECK(gpm.gpm_audit->max_in_span_ratio <= 1e-6);
    CHECK(gpm.gpm_audit->max_orthonormality_error <= 1e-8);
}

TEST_CASE("phase-2 invariants") {
    Fixture fx;
    TrainConfig p1 = fx.config.phase1;
    p1.seed = 11;
    const auto head = train(fx.config.initial, fx.split.head, fx.config.loss, p1);

    SUBCASE("ewc objective equals the tail loss at the anchor") {
        const auto params = fx.params(Strategy::Ewc);
        const auto st = prepare_state(params, head.model, fx.split, 1);
        CHECK(st.anchor == head.model.params().values());
        CHECK(ewc_penalty(st.anchor, st) == 0.0);
    }
    SUBCASE("huge ewc weight pins important coordinates") {
        auto params = fx.params(Strategy::Ewc);
        params.cl_weight = 1e6;
        const auto st = prepare_state(params, head.model, fx.split, 1);
        // keep lr * lambda * F inside the stable range of gradient descent
        params.phase2.learning_rate = 0.5 / (params.cl_weight * st.fisher.maxCoeff());
        params.phase2.momentum = 0.0;
        auto cfg = fx.config;
        cfg.strategy = params;
        cfg.seed = 1;
        const auto r = continue_from_head(head.model, head.trace, fx.split, fx.test, cfg);
        const Vector drift = r.model_after_tail.params().values() - st.anchor;
        int checked = 0;
        for (Index i = 0; i < drift.size(); ++i) {
            if (st.fisher(i) > 1e-3) {
                ++checked;
                CHECK(std::abs(drift(i)) <= 1e-2);
            }
        }
        CHECK(checked > 0);
    }
    SUBCASE("lwf with zero weight follows the naive trajectory") {
        auto naive = fx.params(Strategy::Naive);
        auto lwf = fx.params(Strategy::Lwf);
        lwf.cl_weight = 0.0;
        lwf.phase2 = naive.phase2;
        auto cfg = fx.config;
        cfg.seed = 3;
        cfg.strategy = naive;
        const auto a = continue_from_head(head.model, head.trace, fx.split, fx.test, cfg);
        cfg.strategy = lwf;
        const auto b = continue_from_head(head.model, head.trace, fx.split, fx.test, cfg);
        CHECK(a.model_after_tail.params().values() == b.model_after_tail.params().values());
        CHECK(a.tail_trace.epoch_losses == b.tail_trace.epoch_losses);
    }
    SUBCASE("every strategy is deterministic") {
        for (auto s : {Strategy::Naive, Strategy::Ewc, Strategy::ModifiedEwc, Strategy::Lwf, Strategy::Gpm}) {
            auto cfg = fx.config;
            cfg.strategy = fx.params(s);
            cfg.strategy.phase2.epochs = 3;
            cfg.seed = 21;
            const auto a = run_two_phase(fx.split, fx.test, cfg);
            const auto b = run_two_phase(fx.split, fx.test, cfg);
            CHECK(a.model_after_tail.params().values() == b.model_after_tail.params().values());
            CHECK(a.model_after_head.params().values() == b.model_after_head.params().values());
        }
    }
    SUBCASE("empty tail") {
        auto split = head_tail_split(make_longtail(synthetic_gaussian(4, 4, 50, 3.0, 1), 3.0, 2), 1.0);
        auto cfg = fx.config;
        cfg.strategy = fx.params(Strategy::Naive);
        try {
            run_two_phase(split, fx.test, cfg);
            FAIL("expected Domain");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::Domain);
        }
    }
    SUBCASE("invalid strategy parameters") {
        auto cfg = fx.config;
        cfg.strategy = fx.params(Strategy::Lwf);
        cfg.strategy.temperature = -1.0;
        try {
            continue_from_head(head.model, head.trace, fx.split, fx.test, cfg);
            FAIL("expected Configuration");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::Configuration);
        }
    }
}
