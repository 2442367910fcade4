#pragma once

#include <vector>

#include "sinkclust/autodiff.hpp"
#include "sinkclust/matrix.hpp"

namespace sinkclust {

enum class SinkhornMode { standard, log_domain };

struct SinkhornConfig {
    double epsilon = 1e-2;
    int max_iterations = 50;
    /// Stop once the max-norm marginal residual drops to this value.
    double tolerance = 1e-6;
    SinkhornMode mode = SinkhornMode::log_domain;
    /// When false only the row marginal is enforced (b stays at 1), which is
    /// the soft k-means fixed point.
    bool update_columns = true;

    /// Throws ContractError on epsilon <= 0, max_iterations < 1 or tolerance <= 0.
    void validate() const;
};

/// Output of a Sinkhorn solve. The coupling satisfies
/// plan(i,k) = a_i * exp(-C(i,k)/epsilon) * b_k; the scalings are kept in log
/// form because log-domain solves routinely push a or b outside double range.
struct TransportPlan {
    Matrix plan;
    Vector log_a;
    Vector log_b;
    int iterations_run = 0;
    double marginal_violation = 0.0;
    /// Residual after each iteration, index 0 = first iteration.
    std::vector<double> violation_history;

    Vector scaling_a() const { return log_a.array().exp(); }
    Vector scaling_b() const { return log_b.array().exp(); }
    /// log plan(i,k), finite even where plan(i,k) underflows.
    Matrix log_plan(const Matrix& cost, double epsilon) const;
};

/// Checks w is a strictly positive probability vector of length K.
void validate_proportions(const Vector& w, Eigen::Index clusters);

/// max(||plan 1 - 1/n||_inf, ||plan^T 1 - w||_inf). Pass an empty w to
/// measure the row marginal only.
double marginal_violation(const Matrix& plan, const Vector& w);

/// Sinkhorn matrix scaling between the uniform measure on the n rows of
/// `cost` and the cluster proportions `w`. Dispatches on cfg.mode.
/// Standard mode throws NumericalInstability when exp(-C/epsilon) under- or
/// overflows far enough to make a scaling non-finite.
TransportPlan sinkhorn(const Matrix& cost, const Vector& w, const SinkhornConfig& cfg);

/// Same fixed point as `sinkhorn`, iterated on log scalings with
/// log-sum-exp reductions.
TransportPlan sinkhorn_log_domain(const Matrix& cost, const Vector& w, const SinkhornConfig& cfg);

/// sum C.*plan + epsilon * sum plan.*(log plan - 1). Requires every entry of
/// `plan` to be strictly positive.
double ot_loss(const Matrix& plan, const Matrix& cost, double epsilon);
/// Same value, using the plan's log scalings for the entropy term so that
/// underflowed entries contribute their exact limit of zero.
double ot_loss(const TransportPlan& plan, const Matrix& cost, double epsilon);

/// d ot_loss / d cost at the regularized optimum, which is the plan itself.
/// Throws ContractError if the plan did not reach `tolerance`.
Matrix ot_loss_grad_envelope(const TransportPlan& plan, double tolerance);

struct LpSolution {
    Matrix plan;                 ///< entries in {0, 1/n}
    double objective = 0.0;      ///< sum C.*plan
    std::vector<int> assignment; ///< cluster of each row
    /// Best objective among all other feasible assignments (+inf if none).
    double runner_up = 0.0;
};

/// Unregularized OT by exhaustive enumeration of hard assignments with
/// exact cluster counts n*w_k. Ties keep the lexicographically first
/// assignment. Limited to n <= 8, K <= 4.
LpSolution exact_lp_oracle(const Matrix& cost, const Vector& w);

/// Unrolled Sinkhorn recorded on a tape so the loss can be differentiated
/// with respect to whatever produced `cost`.
struct TapedTransport {
    ad::Var plan;
    ad::Var loss;
    int iterations_run = 0;
    double marginal_violation = 0.0;
};

/// Records the iterations of `sinkhorn` on the cost's tape and the
/// regularized objective on top of them. With transport_cost_only the
/// entropy term is left out of `loss`.
TapedTransport sinkhorn_taped(const ad::Var& cost, const Vector& w, const SinkhornConfig& cfg,
                              bool transport_cost_only = false);

}  // namespace sinkclust
