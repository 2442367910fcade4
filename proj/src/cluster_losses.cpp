#include "sinkclust/cluster_losses.hpp"

#include <cmath>
#include <limits>

#include "sinkclust/errors.hpp"

namespace sinkclust {

void ClusterModel::validate() const
{
    if (centers.rows() < 1)
        throw ContractError("cluster model: need K >= 1 centers");
    validate_proportions(proportions, centers.rows());
}

ClusterModel ClusterModel::with_uniform_proportions(Matrix centers)
{
    const auto K = centers.rows();
    if (K < 1)
        throw ContractError("cluster model: need K >= 1 centers");
    return ClusterModel{std::move(centers), Vector::Constant(K, 1.0 / static_cast<double>(K))};
}

double kmeans_loss(const Matrix& embedded, const Matrix& centers)
{
    if (embedded.cols() != centers.cols())
        throw ShapeError("kmeans_loss: " + shape_string(embedded) + " vs centers " +
                         shape_string(centers));
    if (centers.rows() == 0)
        throw ShapeError("kmeans_loss: no centers");
    double total = 0.0;
    for (Eigen::Index i = 0; i < embedded.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < centers.rows(); ++k)
            best = std::min(best, (embedded.row(i) - centers.row(k)).squaredNorm());
        total += best;
    }
    return total;
}

Matrix soft_kmeans_assign(const Matrix& cost, double epsilon)
{
    if (!(epsilon > 0.0))
        throw ContractError("soft_kmeans_assign: epsilon must be > 0");
    const double n = static_cast<double>(cost.rows());
    Matrix logits = -cost / epsilon;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - m).exp();
        logits.row(i) /= n * logits.row(i).sum();
    }
    return logits;
}

ad::Var soft_kmeans_loss(const ad::Var& embedded, const ad::Var& centers, double epsilon)
{
    if (!(epsilon > 0.0))
        throw ContractError("soft_kmeans_loss: epsilon must be > 0");
    ad::Var cost = ad::pairwise_sqdist(embedded, centers);
    ad::Var logits = ad::scale(cost, -1.0 / epsilon);
    ad::Var log_plan = ad::add_scalar(
        ad::add_col_vector(logits, ad::scale(ad::row_logsumexp(logits), -1.0)),
        -std::log(static_cast<double>(cost.rows())));
    ad::Var plan = ad::exp(log_plan);
    ad::Var transport = ad::sum(ad::mul(cost, plan));
    ad::Var entropy = ad::sum(ad::mul(plan, ad::add_scalar(log_plan, -1.0)));
    return ad::add(transport, ad::scale(entropy, epsilon));
}

double soft_kmeans_loss(const Matrix& embedded, const Matrix& centers, double epsilon)
{
    ad::Tape tape;
    return soft_kmeans_loss(tape.constant(embedded), tape.constant(centers), epsilon).scalar();
}

OtLossResult ot_cluster_loss(const ad::Var& embedded, const ad::Var& centers, const Vector& w,
                             const OtLossOptions& options)
{
    ad::Var cost = ad::pairwise_sqdist(embedded, centers);
    OtLossResult out;
    if (options.gradient == OtGradient::unrolled) {
        auto taped = sinkhorn_taped(cost, w, options.sinkhorn, options.transport_cost_only);
        out.loss = taped.loss;
        out.iterations_run = taped.iterations_run;
        out.marginal_violation = taped.marginal_violation;
        return out;
    }

    const TransportPlan solved = sinkhorn(cost.value(), w, options.sinkhorn);
    const Matrix grad = ot_loss_grad_envelope(solved, options.sinkhorn.tolerance);
    ad::Tape& tape = cost.tape();
    const double epsilon = options.sinkhorn.epsilon;
    // Linear in C with slope `plan`, shifted so the value equals the loss.
    ad::Var linear = ad::sum(ad::mul(cost, tape.constant(grad)));
    const double full = options.transport_cost_only ? linear.scalar()
                                                    : ot_loss(solved, cost.value(), epsilon);
    out.loss = ad::add_scalar(linear, full - linear.scalar());
    out.iterations_run = solved.iterations_run;
    out.marginal_violation = solved.marginal_violation;
    return out;
}

double ot_cluster_loss(const Matrix& embedded, const ClusterModel& model,
                       const OtLossOptions& options)
{
    model.validate();
    ad::Tape tape;
    return ot_cluster_loss(tape.constant(embedded), tape.constant(model.centers),
                           model.proportions, options)
        .loss.scalar();
}

CombinedLoss combined_loss(const TapedAutoencoder& net, const ad::Var& centers,
                           const ad::Var& batch, const Vector& w,
                           const CombinedLossConfig& config)
{
    CombinedLoss out;
    out.embedded = encoder_forward(net, batch);
    ad::Var residual = ad::sub(batch, decoder_forward(net, out.embedded));
    out.reconstruction = ad::sum(ad::mul(residual, residual));

    switch (config.term) {
    case ClusterTerm::none:
        out.total = out.reconstruction;
        return out;
    case ClusterTerm::soft_kmeans:
        out.clustering = soft_kmeans_loss(out.embedded, centers, config.ot.sinkhorn.epsilon);
        break;
    case ClusterTerm::ot: {
        auto ot = ot_cluster_loss(out.embedded, centers, w, config.ot);
        out.clustering = ot.loss;
        out.sinkhorn_iterations = ot.iterations_run;
        out.marginal_violation = ot.marginal_violation;
        break;
    }
    }
    out.total = ad::add(out.reconstruction, ad::scale(out.clustering, config.lambda));
    return out;
}

}  // namespace sinkclust
