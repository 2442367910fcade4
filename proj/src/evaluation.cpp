#include "sinkclust/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "sinkclust/errors.hpp"

namespace sinkclust {

namespace {

// Minimum-cost assignment on a square cost matrix (potentials / shortest
// augmenting path). Returns the column of each row.
std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost)
{
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j])
                    continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

double best_value(const Eigen::MatrixXd& weights)
{
    if (weights.rows() == 0)
        return 0.0;
    const auto sigma = min_cost_assignment(-weights);
    double total = 0.0;
    for (int c = 0; c < weights.rows(); ++c)
        total += weights(c, sigma[c]);
    return total;
}

Eigen::MatrixXd drop(const Eigen::MatrixXd& m, const std::vector<int>& rows,
                     const std::vector<int>& cols)
{
    Eigen::MatrixXd out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(i, j) = m(rows[i], cols[j]);
    return out;
}

}  // namespace

ConfusionMatrix ConfusionMatrix::build(const std::vector<int>& labels,
                                       const std::vector<int>& clusters)
{
    if (labels.size() != clusters.size())
        throw ContractError("confusion matrix: " + std::to_string(labels.size()) +
                            " labels but " + std::to_string(clusters.size()) +
                            " cluster indices");
    int side = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || clusters[i] < 0)
            throw ContractError("confusion matrix: negative index");
        side = std::max({side, labels[i] + 1, clusters[i] + 1});
    }
    ConfusionMatrix out;
    out.counts = Eigen::MatrixXd::Zero(side, side);
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.counts(labels[i], clusters[i]) += 1.0;
    return out;
}

std::vector<int> hungarian_max(const Eigen::MatrixXd& weights)
{
    if (weights.rows() != weights.cols())
        throw ShapeError("hungarian_max: matrix is " + std::to_string(weights.rows()) + "x" +
                         std::to_string(weights.cols()));
    if (!weights.allFinite())
        throw ContractError("hungarian_max: non-finite weight");
    const int K = static_cast<int>(weights.rows());
    const double target = best_value(weights);
    const double slack = 1e-9 * (1.0 + std::abs(target)) + 1e-9 * weights.cwiseAbs().sum();

    // Fix rows in order, each to the smallest column that keeps the optimum.
    std::vector<int> sigma(K, -1);
    std::vector<int> free_cols(K);
    std::iota(free_cols.begin(), free_cols.end(), 0);
    double fixed = 0.0;
    for (int c = 0; c < K; ++c) {
        std::vector<int> rest_rows;
        for (int r = c + 1; r < K; ++r)
            rest_rows.push_back(r);
        for (std::size_t t = 0; t < free_cols.size(); ++t) {
            const int j = free_cols[t];
            std::vector<int> rest_cols = free_cols;
            rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(t));
            const double value =
                fixed + weights(c, j) + best_value(drop(weights, rest_rows, rest_cols));
            if (value >= target - slack || t + 1 == free_cols.size()) {
                sigma[c] = j;
                fixed += weights(c, j);
                free_cols = std::move(rest_cols);
                break;
            }
        }
    }
    return sigma;
}

double clustering_accuracy(const std::vector<int>& labels, const std::vector<int>& clusters)
{
    const auto confusion = ConfusionMatrix::build(labels, clusters);
    if (labels.empty())
        throw ContractError("clustering_accuracy: no samples");
    const auto sigma = hungarian_max(confusion.counts);
    double hits = 0.0;
    for (int c = 0; c < confusion.counts.rows(); ++c)
        hits += confusion.counts(c, sigma[c]);
    return hits / static_cast<double>(labels.size());
}

WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() < 2 || b.size() < 2)
        throw ContractError("welch_t_test: each sample needs at least 2 values");
    auto moments = [](const std::vector<double>& x) {
        const double n = static_cast<double>(x.size());
        const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : x)
            ss += (v - mean) * (v - mean);
        return std::pair{mean, ss / (n - 1.0)};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    if (!(va > 0.0) || !(vb > 0.0))
        throw ContractError("welch_t_test: a sample has zero variance");
    const double sa = va / static_cast<double>(a.size());
    const double sb = vb / static_cast<double>(b.size());
    WelchResult out;
    out.t = (ma - mb) / std::sqrt(sa + sb);
    out.df = (sa + sb) * (sa + sb) /
             (sa * sa / static_cast<double>(a.size() - 1) +
              sb * sb / static_cast<double>(b.size() - 1));
    const boost::math::students_t dist(out.df);
    out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t))));
    return out;
}

}  // namespace sinkclust
