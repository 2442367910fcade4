#include "sinkclust/kmeans.hpp"

#include <limits>
#include <random>
#include <string>

#include "sinkclust/cluster_losses.hpp"
#include "sinkclust/errors.hpp"

namespace sinkclust {

namespace {

double assigned_objective(const Matrix& points, const Matrix& centers,
                          const std::vector<int>& assignments)
{
    double total = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        total += (points.row(i) - centers.row(assignments[static_cast<std::size_t>(i)])).squaredNorm();
    return total;
}

Matrix update_centers(const Matrix& points, const Matrix& previous,
                      const std::vector<int>& assignments)
{
    const auto K = previous.rows();
    Matrix sums = Matrix::Zero(K, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(K), 0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const int k = assignments[static_cast<std::size_t>(i)];
        sums.row(k) += points.row(i);
        ++counts[static_cast<std::size_t>(k)];
    }
    Matrix centers = previous;
    std::vector<Eigen::Index> empty;
    for (Eigen::Index k = 0; k < K; ++k) {
        if (counts[static_cast<std::size_t>(k)] > 0)
            centers.row(k) = sums.row(k) / static_cast<double>(counts[static_cast<std::size_t>(k)]);
        else
            empty.push_back(k);
    }
    if (empty.empty())
        return centers;

    // Re-seed each empty cluster on the point farthest from its own center.
    std::vector<double> dist(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        dist[static_cast<std::size_t>(i)] =
            (points.row(i) - centers.row(assignments[static_cast<std::size_t>(i)])).squaredNorm();
    for (auto k : empty) {
        Eigen::Index far = 0;
        for (Eigen::Index i = 1; i < points.rows(); ++i)
            if (dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)])
                far = i;
        centers.row(k) = points.row(far);
        dist[static_cast<std::size_t>(far)] = -1.0;
    }
    return centers;
}

}  // namespace

std::vector<int> assign_nearest(const Matrix& points, const Matrix& centers)
{
    if (points.cols() != centers.cols())
        throw ShapeError("assign_nearest: " + shape_string(points) + " vs centers " +
                         shape_string(centers));
    if (centers.rows() == 0)
        throw ShapeError("assign_nearest: no centers");
    std::vector<int> out(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (Eigen::Index k = 0; k < centers.rows(); ++k) {
            const double d = (points.row(i) - centers.row(k)).squaredNorm();
            if (d < best) {
                best = d;
                arg = static_cast<int>(k);
            }
        }
        out[static_cast<std::size_t>(i)] = arg;
    }
    return out;
}

Matrix kmeanspp_init(const Matrix& points, int clusters, std::uint64_t seed)
{
    const auto n = points.rows();
    if (clusters < 1)
        throw ContractError("kmeanspp_init: need at least one cluster");
    if (n < clusters)
        throw ContractError("kmeanspp_init: " + std::to_string(n) + " points for " +
                            std::to_string(clusters) + " clusters");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Matrix centers(clusters, points.cols());
    std::vector<bool> chosen(static_cast<std::size_t>(n), false);

    auto pick_uniform_unchosen = [&]() {
        Eigen::Index remaining = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            remaining += chosen[static_cast<std::size_t>(i)] ? 0 : 1;
        auto target = static_cast<Eigen::Index>(unit(rng) * static_cast<double>(remaining));
        target = std::min(target, remaining - 1);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (chosen[static_cast<std::size_t>(i)])
                continue;
            if (target-- == 0)
                return i;
        }
        return n - 1;
    };

    Eigen::Index first = pick_uniform_unchosen();
    chosen[static_cast<std::size_t>(first)] = true;
    centers.row(0) = points.row(first);
    Vector d2(n);
    for (Eigen::Index i = 0; i < n; ++i)
        d2(i) = (points.row(i) - centers.row(0)).squaredNorm();

    for (int k = 1; k < clusters; ++k) {
        const double total = d2.sum();
        Eigen::Index next = n - 1;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (d2(i) > 0.0 && acc > target) {
                    next = i;
                    break;
                }
            }
            // Rounding can leave `target` past the final partial sum.
            while (d2(next) <= 0.0 && next > 0)
                --next;
        } else {
            next = pick_uniform_unchosen();
        }
        chosen[static_cast<std::size_t>(next)] = true;
        centers.row(k) = points.row(next);
        for (Eigen::Index i = 0; i < n; ++i)
            d2(i) = std::min(d2(i), (points.row(i) - centers.row(k)).squaredNorm());
    }
    return centers;
}

KmeansResult lloyd(const Matrix& points, const Matrix& initial_centers, int max_iter, double tol)
{
    if (points.cols() != initial_centers.cols())
        throw ShapeError("lloyd: " + shape_string(points) + " vs centers " +
                         shape_string(initial_centers));
    KmeansResult out;
    out.centers = initial_centers;
    out.assignments = assign_nearest(points, out.centers);
    double objective = assigned_objective(points, out.centers, out.assignments);
    out.objective_history.push_back(objective);

    for (int it = 0; it < max_iter; ++it) {
        Matrix centers = update_centers(points, out.centers, out.assignments);
        std::vector<int> assignments = assign_nearest(points, centers);
        const double next = assigned_objective(points, centers, assignments);
        const bool changed = assignments != out.assignments;
        out.centers = std::move(centers);
        out.assignments = std::move(assignments);
        out.objective_history.push_back(next);
        out.iterations = it + 1;
        if (!changed || objective - next < tol)
            break;
        objective = next;
    }
    out.inertia = kmeans_loss(points, out.centers);
    return out;
}

KmeansResult kmeans(const Matrix& points, int clusters, std::uint64_t seed, int max_iter,
                    double tol)
{
    return lloyd(points, kmeanspp_init(points, clusters, seed), max_iter, tol);
}

}  // namespace sinkclust
