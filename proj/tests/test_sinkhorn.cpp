#include "doctest.h"

#include <random>

#include "sinkclust/errors.hpp"
#include "sinkclust/sinkhorn.hpp"
#include "test_support.hpp"

using namespace sinkclust;
using sinkclust::testing::finite_difference;
using sinkclust::testing::max_abs_diff;
using sinkclust::testing::max_relative_error;
using sinkclust::testing::random_matrix;
using sinkclust::testing::random_simplex;

namespace {

SinkhornConfig config(double eps, int iters, double tol, SinkhornMode mode)
{
    SinkhornConfig c;
    c.epsilon = eps;
    c.max_iterations = iters;
    c.tolerance = tol;
    c.mode = mode;
    return c;
}

// Seeded n x K instance whose LP optimum beats every other feasible
// assignment by at least `margin`.
std::pair<Matrix, LpSolution> separated_instance(std::mt19937_64& rng, Eigen::Index n,
                                                 Eigen::Index K, const Vector& w, double margin)
{
    for (;;) {
        Matrix c = random_matrix(rng, n, K, 0.0, 1.0);
        auto lp = exact_lp_oracle(c, w);
        if (lp.runner_up - lp.objective >= margin)
            return {c, lp};
    }
}

}  // namespace

TEST_CASE("zero cost gives the product of the marginals")
{
    const Matrix c = Matrix::Zero(2, 2);
    const Vector w = make_vector({0.5, 0.5});
    for (auto mode : {SinkhornMode::standard, SinkhornMode::log_domain}) {
        auto p = sinkhorn(c, w, config(0.1, 50, 1e-12, mode));
        CHECK(max_abs_diff(p.plan, Matrix::Constant(2, 2, 0.25)) < 1e-15);
    }
}

TEST_CASE("huge epsilon spreads each point by the global proportions")
{
    std::mt19937_64 rng(1);
    const Vector w = make_vector({0.3, 0.7});
    const Matrix c = random_matrix(rng, 2, 2, 0.0, 5.0);
    auto p = sinkhorn(c, w, config(1e6, 50, 1e-12, SinkhornMode::standard));
    CHECK(max_abs_diff(p.plan, make_matrix({{0.15, 0.35}, {0.15, 0.35}})) < 1e-3);
}

TEST_CASE("small epsilon approaches the exact transport plan")
{
    std::mt19937_64 rng(42);
    // n = 6 so that n * (1/3) is integral for the exhaustive oracle.
    const Vector w = Vector::Constant(3, 1.0 / 3.0);
    auto [c, lp] = separated_instance(rng, 6, 3, w, 0.01);
    // Integral n * w makes the LP degenerate, so convergence is sublinear here.
    auto p = sinkhorn_log_domain(c, w, config(1e-3, 200000, 1e-6, SinkhornMode::log_domain));
    CHECK(p.marginal_violation <= 1e-6);
    CHECK(max_abs_diff(p.plan, lp.plan) < 1e-3);
    CHECK(std::abs(ot_loss(p, c, 1e-3) - lp.objective) < 1e-2);
}

TEST_CASE("log-domain and standard modes agree")
{
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 3 + trial % 7, K = 2 + trial % 4;
        const Matrix c = random_matrix(rng, n, K, 0.0, 2.0);
        const Vector w = random_simplex(rng, K);
        auto std_plan = sinkhorn(c, w, config(0.2, 40, 1e-300, SinkhornMode::standard));
        auto log_plan = sinkhorn_log_domain(c, w, config(0.2, 40, 1e-300, SinkhornMode::log_domain));
        CHECK(std_plan.iterations_run == log_plan.iterations_run);
        CHECK(max_abs_diff(std_plan.plan, log_plan.plan) < 1e-10);
    }

    const Matrix zero = Matrix::Zero(3, 2);
    auto z = sinkhorn_log_domain(zero, make_vector({0.5, 0.5}), config(0.5, 10, 1e-14, SinkhornMode::log_domain));
    CHECK(max_abs_diff(z.plan, Matrix::Constant(3, 2, 1.0 / 6.0)) < 1e-15);
}

TEST_CASE("large costs: standard mode fails loudly, log-domain converges")
{
    std::mt19937_64 rng(17);
    Matrix c = random_matrix(rng, 5, 3, 0.0, 100.0);
    c.row(0) << 100.0, 90.0, 80.0;
    const Vector w = make_vector({0.2, 0.4, 0.4});
    CHECK_THROWS_AS(sinkhorn(c, w, config(1e-2, 1000, 1e-6, SinkhornMode::standard)),
                    NumericalInstability);
    auto p = sinkhorn(c, w, config(1e-2, 1000, 1e-6, SinkhornMode::log_domain));
    CHECK(p.plan.allFinite());
    CHECK(p.marginal_violation <= 1e-6);
}

TEST_CASE("ot_loss closed forms")
{
    const double eps = 0.3;
    const Matrix uniform = Matrix::Constant(2, 3, 1.0 / 6.0);
    CHECK(std::abs(ot_loss(uniform, Matrix::Zero(2, 3), eps) - eps * (-std::log(6.0) - 1.0)) < 1e-15);

    const Matrix single = make_matrix({{1.0}});
    CHECK(std::abs(ot_loss(single, make_matrix({{2.5}}), eps) - (2.5 - eps)) < 1e-15);

    auto p = sinkhorn(make_matrix({{2.5}}), make_vector({1.0}), config(eps, 5, 1e-12, SinkhornMode::log_domain));
    CHECK(std::abs(ot_loss(p, make_matrix({{2.5}}), eps) - (2.5 - eps)) < 1e-15);

    CHECK_THROWS_AS(ot_loss(make_matrix({{0.5, 0.0}}), make_matrix({{1.0, 1.0}}), eps), ContractError);
}

TEST_CASE("envelope gradient")
{
    std::mt19937_64 rng(23);
    const Eigen::Index n = 5, K = 3;
    const Matrix c = random_matrix(rng, n, K, 0.0, 1.0);
    const Vector w = random_simplex(rng, K);
    const auto cfg = config(0.1, 5000, 1e-13, SinkhornMode::log_domain);
    auto p = sinkhorn(c, w, cfg);
    REQUIRE(p.marginal_violation <= 1e-12);
    const Matrix env = ot_loss_grad_envelope(p, cfg.tolerance);

    SUBCASE("matches finite differences of the solved loss")
    {
        const Matrix numeric = finite_difference(
            [&](const std::vector<Matrix>& x) { return ot_loss(sinkhorn(x[0], w, cfg), x[0], cfg.epsilon); },
            {c}, 0);
        CHECK(max_relative_error(env, numeric) < 1e-4);
    }

    SUBCASE("matches the unrolled tape gradient")
    {
        ad::Tape tape;
        auto cost = tape.leaf(c);
        auto taped = sinkhorn_taped(cost, w, cfg);
        REQUIRE(taped.marginal_violation <= 1e-10);
        auto g = tape.backward(taped.loss);
        CHECK(max_abs_diff(g.of(cost), env) < 1e-5);
        CHECK(std::abs(taped.loss.scalar() - ot_loss(p, c, cfg.epsilon)) < 1e-12);
    }

    SUBCASE("zero cost")
    {
        auto z = sinkhorn(Matrix::Zero(2, 2), make_vector({0.5, 0.5}), cfg);
        CHECK(max_abs_diff(ot_loss_grad_envelope(z, cfg.tolerance), Matrix::Constant(2, 2, 0.25)) < 1e-15);
    }

    SUBCASE("unconverged plans are rejected")
    {
        auto rough = sinkhorn(c, w, config(0.01, 1, 1e-12, SinkhornMode::log_domain));
        CHECK_THROWS_AS(ot_loss_grad_envelope(rough, 1e-12), ContractError);
    }
}

TEST_CASE("exact LP oracle")
{
    const Vector half = make_vector({0.5, 0.5});
    auto diag = exact_lp_oracle(make_matrix({{0, 1}, {1, 0}}), half);
    CHECK(diag.assignment == std::vector<int>{0, 1});
    CHECK(diag.objective == 0.0);

    auto forced = exact_lp_oracle(make_matrix({{0, 0}, {0, 1}}), half);
    CHECK(forced.assignment == std::vector<int>{1, 0});
    CHECK(forced.objective == 0.0);

    // Balanced n = 4: constrained optimum vs nearest-center cost.
    std::mt19937_64 rng(4);
    int equal_cases = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix c = random_matrix(rng, 4, 2, 0.0, 1.0);
        auto lp = exact_lp_oracle(c, half);
        double unconstrained = 0.0;
        int in_first = 0;
        for (Eigen::Index i = 0; i < 4; ++i) {
            unconstrained += c.row(i).minCoeff() / 4.0;
            in_first += c(i, 0) <= c(i, 1) ? 1 : 0;
        }
        CHECK(lp.objective >= unconstrained - 1e-15);
        const bool balanced = in_first == 2;
        CHECK((std::abs(lp.objective - unconstrained) < 1e-15) == balanced);
        equal_cases += balanced ? 1 : 0;
    }
    CHECK(equal_cases > 0);

    CHECK_THROWS_AS(exact_lp_oracle(Matrix::Zero(5, 3), Vector::Constant(3, 1.0 / 3.0)), ContractError);
    CHECK_THROWS_AS(exact_lp_oracle(Matrix::Zero(9, 3), Vector::Constant(3, 1.0 / 3.0)), SizeError);
}

TEST_CASE("proportions must lie strictly inside the simplex")
{
    const Matrix c = Matrix::Zero(4, 2);
    auto cfg = config(0.1, 10, 1e-6, SinkhornMode::log_domain);
    CHECK_THROWS_AS(sinkhorn(c, make_vector({0.6, 0.6}), cfg), ContractError);
    CHECK_THROWS_AS(sinkhorn(c, make_vector({1.0, 0.0}), cfg), ContractError);
    CHECK_THROWS_AS(sinkhorn(c, make_vector({1.0}), cfg), ShapeError);
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(sinkhorn(c, make_vector({0.5, 0.5}), cfg), ContractError);
}

TEST_CASE("marginals, monotone residual and scale invariance")
{
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 10 + trial * 7, K = 2 + trial % 8;
        const Matrix c = random_matrix(rng, n, K, 0.0, 1.0);
        const Vector w = random_simplex(rng, K);
        const auto cfg = config(0.05, 20000, 1e-9, SinkhornMode::log_domain);
        auto p = sinkhorn(c, w, cfg);
        CHECK(p.marginal_violation <= 1e-9);
        CHECK((p.plan.array() >= 0.0).all());
        CHECK(marginal_violation(p.plan, w) <= 1e-9);
        for (std::size_t it = 10; it < p.violation_history.size(); it += 10)
            CHECK(p.violation_history[it] <= p.violation_history[it - 10]);

        const double lambda = 3.7;
        auto scaled = sinkhorn(lambda * c, w, config(lambda * 0.05, 20000, 1e-9, SinkhornMode::log_domain));
        CHECK(max_abs_diff(scaled.plan, p.plan) < 1e-12);
    }
}

TEST_CASE("row-only iterations leave columns free")
{
    std::mt19937_64 rng(12);
    const Matrix c = random_matrix(rng, 6, 3, 0.0, 1.0);
    auto cfg = config(0.1, 10, 1e-14, SinkhornMode::standard);
    cfg.update_columns = false;
    auto p = sinkhorn(c, Vector::Constant(3, 1.0 / 3.0), cfg);
    CHECK(p.iterations_run == 1);
    CHECK((p.plan.rowwise().sum().array() - 1.0 / 6.0).abs().maxCoeff() < 1e-15);
    CHECK(p.log_b == Vector::Zero(3));
}
