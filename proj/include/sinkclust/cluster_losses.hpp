#pragma once

#include "sinkclust/autodiff.hpp"
#include "sinkclust/matrix.hpp"
#include "sinkclust/neural.hpp"
#include "sinkclust/sinkhorn.hpp"

namespace sinkclust {

/// Cluster centers and the target cluster proportions w (w_k = n_k / n).
struct ClusterModel {
    Matrix centers;      ///< K x p
    Vector proportions;  ///< length K, strictly positive, sums to 1

    Eigen::Index clusters() const { return centers.rows(); }
    void validate() const;
    static ClusterModel with_uniform_proportions(Matrix centers);
};

/// sum_i min_k ||z_i - mu_k||^2, without a 1/n factor.
double kmeans_loss(const Matrix& embedded, const Matrix& centers);

/// Closed-form minimizer of the row-constrained regularized problem:
/// plan(i,k) = exp(-C(i,k)/eps) / (n sum_k' exp(-C(i,k')/eps)).
Matrix soft_kmeans_assign(const Matrix& cost, double epsilon);

/// Row-constrained regularized objective at its closed-form optimum:
/// sum C.*plan + eps * sum plan.*(log plan - 1).
ad::Var soft_kmeans_loss(const ad::Var& embedded, const ad::Var& centers, double epsilon);
double soft_kmeans_loss(const Matrix& embedded, const Matrix& centers, double epsilon);

enum class OtGradient { unrolled, envelope };

struct OtLossOptions {
    SinkhornConfig sinkhorn;
    OtGradient gradient = OtGradient::unrolled;
    /// Drop the entropy term from the reported loss (transport cost only).
    bool transport_cost_only = false;
};

struct OtLossResult {
    ad::Var loss;
    int iterations_run = 0;
    double marginal_violation = 0.0;
};

/// Regularized OT between the embedded batch (uniform weights) and the
/// centers weighted by w. Unrolled mode differentiates through the executed
/// Sinkhorn iterations; envelope mode uses d loss / d C = plan and requires
/// the solve to converge.
OtLossResult ot_cluster_loss(const ad::Var& embedded, const ad::Var& centers, const Vector& w,
                             const OtLossOptions& options);
double ot_cluster_loss(const Matrix& embedded, const ClusterModel& model,
                       const OtLossOptions& options);

enum class ClusterTerm { none, soft_kmeans, ot };

struct CombinedLossConfig {
    ClusterTerm term = ClusterTerm::ot;
    double lambda = 1.0;
    OtLossOptions ot;  ///< sinkhorn.epsilon is also the soft k-means epsilon
};

struct CombinedLoss {
    ad::Var total;
    ad::Var reconstruction;
    ad::Var clustering;  ///< unbound when term == none
    ad::Var embedded;
    int sinkhorn_iterations = 0;
    double marginal_violation = 0.0;
};

/// reconstruction_loss + lambda * clustering loss on one tape.
CombinedLoss combined_loss(const TapedAutoencoder& net, const ad::Var& centers,
                           const ad::Var& batch, const Vector& w,
                           const CombinedLossConfig& config);

}  // namespace sinkclust
