#pragma once

#include <cstdint>
#include <vector>

#include "sinkclust/matrix.hpp"

namespace sinkclust {

struct KmeansResult {
    Matrix centers;
    std::vector<int> assignments;
    double inertia = 0.0;  ///< kmeans_loss(points, centers)
    int iterations = 0;
    /// Objective after the initial assignment and after every iteration.
    std::vector<double> objective_history;
};

/// Nearest center per row; ties go to the lowest index.
std::vector<int> assign_nearest(const Matrix& points, const Matrix& centers);

/// k-means++ (D^2-weighted) seeding, deterministic in `seed`.
Matrix kmeanspp_init(const Matrix& points, int clusters, std::uint64_t seed);

/// Lloyd iterations from `initial_centers`. Stops at an assignment fixpoint,
/// when the objective decreases by less than `tol`, or after `max_iter`
/// rounds. Empty clusters are moved onto the point farthest from its center.
KmeansResult lloyd(const Matrix& points, const Matrix& initial_centers, int max_iter = 300,
                   double tol = 1e-8);

/// kmeanspp_init followed by lloyd.
KmeansResult kmeans(const Matrix& points, int clusters, std::uint64_t seed, int max_iter = 300,
                    double tol = 1e-8);

}  // namespace sinkclust
