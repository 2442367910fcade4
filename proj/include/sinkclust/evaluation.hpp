#pragma once

#include <vector>

#include "sinkclust/matrix.hpp"

namespace sinkclust {

/// counts(c, k) = #{i : y_i = c and k_i = k}; square, side max(classes, clusters).
struct ConfusionMatrix {
    Eigen::MatrixXd counts;

    static ConfusionMatrix build(const std::vector<int>& labels, const std::vector<int>& clusters);
    double total() const { return counts.sum(); }
};

/// Permutation sigma maximizing sum_c weights(c, sigma(c)); ties resolve to
/// the lexicographically smallest sigma.
std::vector<int> hungarian_max(const Eigen::MatrixXd& weights);

/// Best one-to-one matching of clusters to classes, as a fraction of n.
double clustering_accuracy(const std::vector<int>& labels, const std::vector<int>& clusters);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0;  ///< two-sided
};

/// Unequal-variance two-sample t-test with Welch-Satterthwaite degrees of
/// freedom.
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sinkclust
