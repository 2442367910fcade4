#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "sinkclust/errors.hpp"
#include "sinkclust/evaluation.hpp"

using namespace sinkclust;

namespace {

Eigen::MatrixXd random_integer_matrix(std::mt19937_64& rng, int k, int hi)
{
    std::uniform_int_distribution<int> dist(0, hi);
    Eigen::MatrixXd m(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            m(i, j) = dist(rng);
    return m;
}

double value_of(const Eigen::MatrixXd& w, const std::vector<int>& sigma)
{
    double total = 0.0;
    for (std::size_t c = 0; c < sigma.size(); ++c)
        total += w(static_cast<Eigen::Index>(c), sigma[c]);
    return total;
}

// First permutation in lexicographic order reaching the maximum.
std::vector<int> brute_force(const Eigen::MatrixXd& w)
{
    std::vector<int> sigma(w.rows());
    std::iota(sigma.begin(), sigma.end(), 0);
    std::vector<int> best = sigma;
    double best_value = value_of(w, sigma);
    while (std::next_permutation(sigma.begin(), sigma.end())) {
        const double v = value_of(w, sigma);
        if (v > best_value) {
            best_value = v;
            best = sigma;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("hungarian_max examples")
{
    Eigen::MatrixXd diag = Eigen::MatrixXd::Constant(4, 4, 1.0);
    diag.diagonal().setConstant(50.0);
    CHECK(hungarian_max(diag) == std::vector<int>{0, 1, 2, 3});

    Eigen::MatrixXd swap(2, 2);
    swap << 0, 5, 5, 0;
    const auto s = hungarian_max(swap);
    CHECK(s == std::vector<int>{1, 0});
    CHECK(value_of(swap, s) == 10.0);

    CHECK(hungarian_max(Eigen::MatrixXd::Zero(3, 3)) == std::vector<int>{0, 1, 2});
    CHECK(hungarian_max(Eigen::MatrixXd(0, 0)).empty());
    CHECK_THROWS_AS(hungarian_max(Eigen::MatrixXd::Zero(2, 3)), ShapeError);
}

TEST_CASE("hungarian_max matches brute force")
{
    std::mt19937_64 rng(1);
    for (int k = 1; k <= 7; ++k) {
        for (int trial = 0; trial < 15; ++trial) {
            CAPTURE(k);
            CAPTURE(trial);
            // Small ranges force many ties.
            const auto w = random_integer_matrix(rng, k, trial % 2 ? 3 : 1000);
            const auto expected = brute_force(w);
            const auto got = hungarian_max(w);
            CHECK(value_of(w, got) == value_of(w, expected));
            CHECK(got == expected);
        }
    }
    Eigen::MatrixXd real = Eigen::MatrixXd::Random(6, 6);
    CHECK(value_of(real, hungarian_max(real)) == doctest::Approx(value_of(real, brute_force(real))).epsilon(1e-14));
}

TEST_CASE("clustering_accuracy")
{
    const std::vector<int> y{0, 1, 2, 2, 1, 0, 3};
    CHECK(clustering_accuracy(y, y) == 1.0);
    const std::vector<int> renamed{3, 0, 1, 1, 0, 3, 2};
    CHECK(clustering_accuracy(y, renamed) == 1.0);
    CHECK(clustering_accuracy({0, 0, 1, 1}, {0, 1, 1, 1}) == 0.75);

    const std::vector<int> all_one(7, 0);
    CHECK(clustering_accuracy(y, all_one) == doctest::Approx(2.0 / 7.0));

    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> label(0, 4);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> a(60), b(60);
        for (auto& v : a)
            v = label(rng);
        for (auto& v : b)
            v = label(rng);
        const double base = clustering_accuracy(a, b);

        std::vector<int> perm{0, 1, 2, 3, 4};
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<int> relabeled(b.size());
        for (std::size_t i = 0; i < b.size(); ++i)
            relabeled[i] = perm[b[i]];
        CHECK(clustering_accuracy(a, relabeled) == base);

        std::vector<int> order(a.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> a2, b2;
        for (int i : order) {
            a2.push_back(a[i]);
            b2.push_back(b[i]);
        }
        CHECK(clustering_accuracy(a2, b2) == base);

        int largest = 0;
        for (int c = 0; c < 5; ++c)
            largest = std::max<int>(largest, static_cast<int>(std::count(a.begin(), a.end(), c)));
        CHECK(clustering_accuracy(a, std::vector<int>(a.size(), 0)) == largest / 60.0);
    }

    CHECK_THROWS_AS(clustering_accuracy({0, 1}, {0}), ContractError);
    CHECK_THROWS_AS(clustering_accuracy({}, {}), ContractError);
    CHECK_THROWS_AS(clustering_accuracy({0, -1}, {0, 0}), ContractError);
}

TEST_CASE("welch_t_test")
{
    const auto same = welch_t_test({1.0, 2.0, 4.0}, {1.0, 2.0, 4.0});
    CHECK(same.t == 0.0);
    CHECK(same.p_value == doctest::Approx(1.0).epsilon(1e-15));

    CHECK(welch_t_test({1.0, 2.0, 3.0}, {101.0, 102.0, 103.0}).p_value < 1e-4);

    const std::vector<double> a{2.1, 2.5, 2.3, 2.2};
    const std::vector<double> b{1.9, 2.0, 2.1, 1.8};
    const auto r = welch_t_test(a, b);
    // Welch formulas by hand: means 2.275 and 1.95, variances 0.0291667 and 0.0166667.
    const double va = (0.175 * 0.175 + 0.225 * 0.225 + 0.025 * 0.025 + 0.075 * 0.075) / 3.0;
    const double vb = (0.05 * 0.05 + 0.05 * 0.05 + 0.15 * 0.15 + 0.15 * 0.15) / 3.0;
    const double se2 = va / 4.0 + vb / 4.0;
    const double t = 0.325 / std::sqrt(se2);
    const double df = se2 * se2 / ((va / 4.0) * (va / 4.0) / 3.0 + (vb / 4.0) * (vb / 4.0) / 3.0);
    CHECK(std::abs(r.t - t) < 1e-6);
    CHECK(std::abs(r.df - df) < 1e-6);
    // Reference values frozen from scipy.stats.ttest_ind(equal_var=False).
    CHECK(std::abs(r.t - 3.0361458822299396) < 1e-6);
    CHECK(std::abs(r.df - 5.584615384615387) < 1e-6);
    CHECK(std::abs(r.p_value - 0.025081308884364682) < 1e-6);

    const boost::math::students_t dist(df);
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
    CHECK(std::abs(r.p_value - p) < 1e-12);

    const auto flipped = welch_t_test(b, a);
    CHECK(flipped.t == doctest::Approx(-r.t));
    CHECK(flipped.p_value == doctest::Approx(r.p_value));

    CHECK_THROWS_AS(welch_t_test({1.0}, {1.0, 2.0}), ContractError);
    CHECK_THROWS_AS(welch_t_test({1.0, 1.0}, {1.0, 2.0}), ContractError);
}

TEST_CASE("confusion matrix")
{
    const auto c = ConfusionMatrix::build({0, 0, 1, 2}, {1, 1, 0, 1});
    CHECK(c.counts.rows() == 3);
    CHECK(c.counts(0, 1) == 2.0);
    CHECK(c.counts(1, 0) == 1.0);
    CHECK(c.counts(2, 1) == 1.0);
    CHECK(c.total() == 4.0);
}
