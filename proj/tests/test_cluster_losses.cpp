#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sinkclust/cluster_losses.hpp"
#include "sinkclust/errors.hpp"
#include "test_support.hpp"

using namespace sinkclust;
using sinkclust::testing::finite_difference;
using sinkclust::testing::max_abs_diff;
using sinkclust::testing::max_relative_error;
using sinkclust::testing::random_matrix;
using sinkclust::testing::random_simplex;

namespace {

double nearest_oracle(const Matrix& z, const Matrix& mu)
{
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double best = 1e300;
        for (Eigen::Index k = 0; k < mu.rows(); ++k) {
            double d = 0.0;
            for (Eigen::Index j = 0; j < z.cols(); ++j)
                d += (z(i, j) - mu(k, j)) * (z(i, j) - mu(k, j));
            if (d < best)
                best = d;
        }
        total += best;
    }
    return total;
}

Matrix sqdist(const Matrix& z, const Matrix& mu)
{
    Matrix c(z.rows(), mu.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index k = 0; k < mu.rows(); ++k)
            c(i, k) = (z.row(i) - mu.row(k)).squaredNorm();
    return c;
}

Matrix permute_rows(const Matrix& m, const std::vector<int>& perm)
{
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < perm.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
    return out;
}

OtLossOptions ot_options(double eps, int iters, double tol = 1e-9)
{
    OtLossOptions o;
    o.sinkhorn.epsilon = eps;
    o.sinkhorn.max_iterations = iters;
    o.sinkhorn.tolerance = tol;
    return o;
}

// Points in three tight groups of two around well separated centers.
void balanced_instance(std::mt19937_64& rng, Matrix& z, Matrix& mu)
{
    mu = make_matrix({{0.0, 0.0}, {4.0, 0.0}, {0.0, 4.0}});
    z = Matrix(6, 2);
    for (int i = 0; i < 6; ++i)
        z.row(i) = mu.row(i % 3) + 0.3 * random_matrix(rng, 1, 2);
}

}  // namespace

TEST_CASE("kmeans_loss")
{
    const Matrix c = make_matrix({{0.0}, {2.0}});
    CHECK(kmeans_loss(c, c) == 0.0);
    CHECK(kmeans_loss(c, make_matrix({{0.0}, {3.0}})) == 1.0);

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix z = random_matrix(rng, 15, 3);
        const Matrix mu = random_matrix(rng, 4, 3);
        CHECK(std::abs(kmeans_loss(z, mu) - nearest_oracle(z, mu)) < 1e-12);
    }
    CHECK_THROWS_AS(kmeans_loss(c, make_matrix({{0.0, 1.0}})), ShapeError);
}

TEST_CASE("soft_kmeans_assign")
{
    const Matrix flat = Matrix::Constant(3, 4, 2.5);
    const Matrix uniform = soft_kmeans_assign(flat, 0.1);
    CHECK(max_abs_diff(uniform, Matrix::Constant(3, 4, 1.0 / 12.0)) < 1e-16);

    const double eps = 0.37;
    const Matrix two = soft_kmeans_assign(make_matrix({{0.0, eps * std::log(9.0)}}), eps);
    CHECK(std::abs(two(0, 0) - 0.9) < 1e-15);
    CHECK(std::abs(two(0, 1) - 0.1) < 1e-15);

    std::mt19937_64 rng(2);
    const Matrix cost = random_matrix(rng, 7, 4, 0.0, 1.0);
    const Matrix hard = soft_kmeans_assign(cost, 1e-6);
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
        Eigen::Index arg = 0;
        cost.row(i).minCoeff(&arg);
        for (Eigen::Index k = 0; k < cost.cols(); ++k)
            CHECK(std::abs(hard(i, k) - (k == arg ? 1.0 / 7.0 : 0.0)) < 1e-9);
    }

    // Large costs would underflow without the max shift.
    const Matrix big = soft_kmeans_assign(make_matrix({{1e4, 1e4 + 1e-3}}), 1e-3);
    CHECK(all_finite(big));
    CHECK(std::abs(big.sum() - 1.0) < 1e-15);

    CHECK_THROWS_AS(soft_kmeans_assign(cost, 0.0), ContractError);
}

TEST_CASE("soft_kmeans_assign rows sum to 1/n")
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 40);
        const Matrix cost = random_matrix(rng, n, 5, 0.0, 10.0);
        const Matrix pi = soft_kmeans_assign(cost, 0.05 + 0.5 * (trial % 3));
        for (Eigen::Index i = 0; i < n; ++i)
            CHECK(std::abs(pi.row(i).sum() - 1.0 / static_cast<double>(n)) < 4e-16);
    }
}

TEST_CASE("soft_kmeans_assign is the row-only Sinkhorn fixed point")
{
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix cost = random_matrix(rng, 9, 3, 0.0, 2.0);
        SinkhornConfig cfg;
        cfg.epsilon = 0.2;
        cfg.update_columns = false;
        cfg.max_iterations = 5;
        for (auto mode : {SinkhornMode::log_domain, SinkhornMode::standard}) {
            cfg.mode = mode;
            const auto plan = sinkhorn(cost, Vector::Constant(3, 1.0 / 3.0), cfg);
            CHECK(max_abs_diff(plan.plan, soft_kmeans_assign(cost, cfg.epsilon)) < 1e-12);
        }
    }
}

TEST_CASE("soft_kmeans_loss")
{
    std::mt19937_64 rng(5);

    SUBCASE("small epsilon approaches kmeans_loss / n")
    {
        const Matrix z = random_matrix(rng, 10, 2);
        const Matrix mu = random_matrix(rng, 3, 2);
        const double soft = soft_kmeans_loss(z, mu, 1e-6);
        const double hard = kmeans_loss(z, mu) / 10.0;
        CHECK(std::abs(soft - hard) <= 1e-4 * (1.0 + std::abs(soft)));
    }

    SUBCASE("single cluster closed form")
    {
        const Matrix z = random_matrix(rng, 6, 3);
        const Matrix mu = random_matrix(rng, 1, 3);
        const double eps = 0.3;
        const double n = 6.0;
        double spread = 0.0;
        for (Eigen::Index i = 0; i < 6; ++i)
            spread += (z.row(i) - mu.row(0)).squaredNorm();
        const double expected = spread / n + eps * (-std::log(n) - 1.0);
        CHECK(std::abs(soft_kmeans_loss(z, mu, eps) - expected) < 1e-13);
    }

    SUBCASE("equals the regularized objective at the closed-form plan")
    {
        const Matrix z = random_matrix(rng, 8, 2);
        const Matrix mu = random_matrix(rng, 3, 2);
        const double eps = 0.15;
        const Matrix c = sqdist(z, mu);
        const Matrix pi = soft_kmeans_assign(c, eps);
        CHECK(std::abs(soft_kmeans_loss(z, mu, eps) - ot_loss(pi, c, eps)) < 1e-13);
    }

    SUBCASE("gradients match finite differences")
    {
        const Matrix z = random_matrix(rng, 7, 2);
        const Matrix mu = random_matrix(rng, 3, 2);
        const double eps = 0.2;
        ad::Tape tape;
        auto vz = tape.leaf(z);
        auto vmu = tape.leaf(mu);
        auto grads = tape.backward(soft_kmeans_loss(vz, vmu, eps));
        auto f = [&](const std::vector<Matrix>& in) { return soft_kmeans_loss(in[0], in[1], eps); };
        CHECK(max_relative_error(grads.of(vmu), finite_difference(f, {z, mu}, 1)) < 1e-4);
        CHECK(max_relative_error(grads.of(vz), finite_difference(f, {z, mu}, 0)) < 1e-4);
    }
}

TEST_CASE("ot_cluster_loss")
{
    std::mt19937_64 rng(6);

    SUBCASE("small epsilon matches the exact LP on a balanced instance")
    {
        Matrix z, mu;
        balanced_instance(rng, z, mu);
        const Vector w = Vector::Constant(3, 1.0 / 3.0);
        REQUIRE(kmeans_loss(z, mu) > 0.0);
        const auto lp = exact_lp_oracle(sqdist(z, mu), w);
        const double value =
            ot_cluster_loss(z, ClusterModel{mu, w}, ot_options(1e-6, 20000, 1e-9));
        CHECK(std::abs(value - lp.objective) <= 1e-3 * (1.0 + std::abs(value)));
        CHECK(std::abs(lp.objective - kmeans_loss(z, mu) / 6.0) < 1e-12);
    }

    SUBCASE("points on their centers leave only the entropy term")
    {
        const Matrix mu = make_matrix({{0.0, 0.0}, {3.0, 0.0}, {0.0, 3.0}, {3.0, 3.0}});
        const Vector w = Vector::Constant(4, 0.25);
        const double eps = 1e-2;
        const double value = ot_cluster_loss(mu, ClusterModel{mu, w}, ot_options(eps, 1000));
        CHECK(std::abs(value - eps * (-std::log(4.0) - 1.0)) < 1e-12);
    }

    SUBCASE("gradients match finite differences in both modes")
    {
        const Matrix z = random_matrix(rng, 6, 2);
        const Matrix mu = random_matrix(rng, 3, 2);
        const Vector w = random_simplex(rng, 3);
        for (auto mode : {OtGradient::unrolled, OtGradient::envelope}) {
            CAPTURE(static_cast<int>(mode));
            auto opts = ot_options(0.3, 2000, 1e-13);
            opts.gradient = mode;
            ad::Tape tape;
            auto vz = tape.leaf(z);
            auto vmu = tape.leaf(mu);
            auto grads = tape.backward(ot_cluster_loss(vz, vmu, w, opts).loss);
            auto f = [&](const std::vector<Matrix>& in) {
                return ot_cluster_loss(in[0], ClusterModel{in[1], w}, opts);
            };
            CHECK(max_relative_error(grads.of(vmu), finite_difference(f, {z, mu}, 1)) < 1e-4);
            CHECK(max_relative_error(grads.of(vz), finite_difference(f, {z, mu}, 0)) < 1e-4);
        }
    }

    SUBCASE("transport cost only")
    {
        const Matrix z = random_matrix(rng, 5, 2);
        const Matrix mu = random_matrix(rng, 2, 2);
        const Vector w = make_vector({0.4, 0.6});
        auto opts = ot_options(0.1, 1000, 1e-12);
        const auto plan = sinkhorn(sqdist(z, mu), w, opts.sinkhorn);
        opts.transport_cost_only = true;
        const double value = ot_cluster_loss(z, ClusterModel{mu, w}, opts);
        CHECK(std::abs(value - sqdist(z, mu).cwiseProduct(plan.plan).sum()) < 1e-12);
    }

    SUBCASE("envelope mode refuses an unconverged solve")
    {
        const Matrix z = random_matrix(rng, 6, 2);
        const Matrix mu = random_matrix(rng, 3, 2);
        auto opts = ot_options(1e-3, 1, 1e-12);
        opts.gradient = OtGradient::envelope;
        CHECK_THROWS_AS(ot_cluster_loss(z, ClusterModel::with_uniform_proportions(mu), opts),
                        ContractError);
    }

    SUBCASE("invalid proportions")
    {
        const Matrix mu = random_matrix(rng, 2, 2);
        CHECK_THROWS_AS(ot_cluster_loss(mu, ClusterModel{mu, make_vector({0.5, 0.6})},
                                        ot_options(0.1, 10)),
                        ContractError);
        CHECK_THROWS_AS(ot_cluster_loss(mu, ClusterModel{mu, make_vector({1.0, 0.0})},
                                        ot_options(0.1, 10)),
                        ContractError);
    }
}

TEST_CASE("ot_cluster_loss lower bound")
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        CAPTURE(trial);
        const Eigen::Index K = 2 + trial % 2;
        const Eigen::Index n = K * (1 + trial % (K == 2 ? 4 : 2));
        const Matrix z = random_matrix(rng, n, 2);
        const Matrix mu = random_matrix(rng, K, 2);
        const Vector w = Vector::Constant(K, 1.0 / static_cast<double>(K));
        const double eps = 1e-2;
        const double value = ot_cluster_loss(z, ClusterModel{mu, w}, ot_options(eps, 100000, 1e-10));
        const double bound = kmeans_loss(z, mu) / static_cast<double>(n) -
                             eps * static_cast<double>(n * K);
        CHECK(value >= bound);
        const auto lp = exact_lp_oracle(sqdist(z, mu), w);
        CHECK(lp.objective >= kmeans_loss(z, mu) / static_cast<double>(n) - 1e-12);
    }
}

TEST_CASE("losses are permutation invariant")
{
    std::mt19937_64 rng(8);
    const Matrix z = random_matrix(rng, 9, 3);
    const Matrix mu = random_matrix(rng, 3, 3);
    const Vector w = random_simplex(rng, 3);
    std::vector<int> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix zp = permute_rows(z, perm);

    CHECK(std::abs(kmeans_loss(z, mu) - kmeans_loss(zp, mu)) < 1e-12);
    CHECK(std::abs(soft_kmeans_loss(z, mu, 0.1) - soft_kmeans_loss(zp, mu, 0.1)) < 1e-12);
    const auto opts = ot_options(0.1, 5000, 1e-13);
    CHECK(std::abs(ot_cluster_loss(z, ClusterModel{mu, w}, opts) -
                   ot_cluster_loss(zp, ClusterModel{mu, w}, opts)) < 1e-12);
}

TEST_CASE("combined loss")
{
    std::mt19937_64 rng(9);
    auto p = make_autoencoder({6, 4, 2}, 5);
    const Matrix x = random_matrix(rng, 3, 6);
    const Matrix mu = random_matrix(rng, 2, 2);
    const Vector w = make_vector({0.5, 0.5});

    CombinedLossConfig cfg;
    cfg.ot = ot_options(0.5, 500, 1e-12);

    auto evaluate = [&](double lambda, ClusterTerm term) {
        cfg.lambda = lambda;
        cfg.term = term;
        ad::Tape tape;
        auto net = bind(tape, p);
        return combined_loss(net, tape.constant(mu), tape.constant(x), w, cfg).total.scalar();
    };

    const double recon = reconstruction_loss(p, x);
    const double ot = ot_cluster_loss(encode(p, x), ClusterModel{mu, w}, cfg.ot);
    const double soft = soft_kmeans_loss(encode(p, x), mu, cfg.ot.sinkhorn.epsilon);
    CHECK(std::abs(evaluate(0.0, ClusterTerm::ot) - recon) < 1e-12);
    CHECK(std::abs(evaluate(1.0, ClusterTerm::ot) - (recon + ot)) < 1e-12);
    CHECK(std::abs(evaluate(2.5, ClusterTerm::ot) - (recon + 2.5 * ot)) < 1e-12);
    CHECK(std::abs(evaluate(1.0, ClusterTerm::soft_kmeans) - (recon + soft)) < 1e-12);
    CHECK(std::abs(evaluate(1.0, ClusterTerm::none) - recon) < 1e-12);

    SUBCASE("gradient of the sum is the sum of gradients")
    {
        cfg.lambda = 1.0;
        cfg.term = ClusterTerm::ot;
        ad::Tape tape;
        auto net = bind(tape, p);
        auto vmu = tape.leaf(mu);
        auto combined = combined_loss(net, vmu, tape.constant(x), w, cfg);
        auto g_total = tape.backward(combined.total);
        auto g_recon = tape.backward(combined.reconstruction);
        auto g_cluster = tape.backward(combined.clustering);
        for (const auto& v : net.parameters())
            CHECK(max_abs_diff(g_total.of(v), g_recon.of(v) + g_cluster.of(v)) < 1e-12);
        CHECK(max_abs_diff(g_total.of(vmu), g_cluster.of(vmu)) < 1e-15);
    }
}

TEST_CASE("end-to-end gradient of the combined loss")
{
    // 6-4-2-4-6 autoencoder, batch of 3, K = 2.
    std::mt19937_64 rng(10);
    auto p = make_autoencoder({6, 4, 2}, 13);
    for (auto* m : p.parameters())
        *m += 0.1 * random_matrix(rng, m->rows(), m->cols());
    const Matrix x = random_matrix(rng, 3, 6);
    const Matrix mu = random_matrix(rng, 2, 2);
    const Vector w = make_vector({0.4, 0.6});

    for (auto term : {ClusterTerm::ot, ClusterTerm::soft_kmeans}) {
        CAPTURE(static_cast<int>(term));
        CombinedLossConfig cfg;
        cfg.term = term;
        cfg.ot = ot_options(0.5, 3000, 1e-13);

        ad::Tape tape;
        auto net = bind(tape, p);
        auto vmu = tape.leaf(mu);
        auto grads = tape.backward(combined_loss(net, vmu, tape.constant(x), w, cfg).total);

        std::vector<Matrix> inputs;
        for (const auto* m : std::as_const(p).parameters())
            inputs.push_back(*m);
        inputs.push_back(mu);
        auto f = [&](const std::vector<Matrix>& values) {
            AutoencoderParams q = p;
            auto ptrs = q.parameters();
            for (std::size_t i = 0; i < ptrs.size(); ++i)
                *ptrs[i] = values[i];
            ad::Tape t;
            auto n2 = bind(t, q);
            return combined_loss(n2, t.constant(values.back()), t.constant(x), w, cfg)
                .total.scalar();
        };
        auto vars = net.parameters();
        vars.push_back(vmu);
        for (std::size_t slot = 0; slot < vars.size(); ++slot) {
            CAPTURE(slot);
            CHECK(max_relative_error(grads.of(vars[slot]), finite_difference(f, inputs, slot)) <
                  1e-4);
        }
    }
}
