#include "sinkclust/sinkhorn.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "sinkclust/errors.hpp"

namespace sinkclust {

namespace {

template <typename Expr>
double logsumexp(const Expr& x)
{
    const double m = x.maxCoeff();
    if (!std::isfinite(m))
        return m;
    return m + std::log((x.array() - m).exp().sum());
}

void check_inputs(const Matrix& cost, const Vector& w, const SinkhornConfig& cfg)
{
    cfg.validate();
    if (cost.rows() == 0 || cost.cols() == 0)
        throw ShapeError("sinkhorn: empty cost matrix");
    if (!cost.allFinite())
        throw ContractError("sinkhorn: cost matrix has non-finite entries");
    validate_proportions(w, cost.cols());
}

// Residual of the marginals actually enforced by the configuration.
double enforced_violation(const Matrix& plan, const Vector& w, const SinkhornConfig& cfg)
{
    return cfg.update_columns ? marginal_violation(plan, w) : marginal_violation(plan, Vector{});
}

}  // namespace

void SinkhornConfig::validate() const
{
    if (!(epsilon > 0.0))
        throw ContractError("sinkhorn: epsilon must be > 0");
    if (max_iterations < 1)
        throw ContractError("sinkhorn: max_iterations must be >= 1");
    if (!(tolerance > 0.0))
        throw ContractError("sinkhorn: tolerance must be > 0");
}

Matrix TransportPlan::log_plan(const Matrix& cost, double epsilon) const
{
    Matrix lp = -cost / epsilon;
    lp.colwise() += log_a;
    lp.rowwise() += log_b.transpose();
    return lp;
}

void validate_proportions(const Vector& w, Eigen::Index clusters)
{
    if (w.size() != clusters)
        throw ShapeError("proportions: expected " + std::to_string(clusters) + " entries, got " +
                         std::to_string(w.size()));
    if (clusters < 1)
        throw ContractError("proportions: need at least one cluster");
    if (!w.allFinite() || (w.array() <= 0.0).any())
        throw ContractError("proportions: every entry must be strictly positive");
    if (std::abs(w.sum() - 1.0) > 1e-12)
        throw ContractError("proportions: entries must sum to 1");
}

double marginal_violation(const Matrix& plan, const Vector& w)
{
    const double n = static_cast<double>(plan.rows());
    double v = (plan.rowwise().sum().array() - 1.0 / n).abs().maxCoeff();
    if (w.size() > 0)
        v = std::max(v, (plan.colwise().sum().transpose() - w).cwiseAbs().maxCoeff());
    return v;
}

TransportPlan sinkhorn(const Matrix& cost, const Vector& w, const SinkhornConfig& cfg)
{
    if (cfg.mode == SinkhornMode::log_domain)
        return sinkhorn_log_domain(cost, w, cfg);
    check_inputs(cost, w, cfg);

    const auto n = cost.rows();
    const auto K = cost.cols();
    const Matrix kernel = (-cost / cfg.epsilon).array().exp();
    if (!kernel.allFinite())
        throw NumericalInstability("sinkhorn: exp(-C/epsilon) overflowed; use log-domain mode");

    Vector a = Vector::Constant(n, 1.0 / static_cast<double>(n));
    Vector b = Vector::Ones(K);
    TransportPlan out;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        a = (1.0 / static_cast<double>(n)) / (kernel * b).array();
        if (!a.allFinite() || (a.array() <= 0.0).any())
            throw NumericalInstability(
                "sinkhorn: row scaling became non-finite (kernel underflow); use log-domain mode");
        if (cfg.update_columns) {
            b = w.array() / (kernel.transpose() * a).array();
            if (!b.allFinite() || (b.array() <= 0.0).any())
                throw NumericalInstability(
                    "sinkhorn: column scaling became non-finite (kernel underflow); use "
                    "log-domain mode");
        }
        out.plan = a.asDiagonal() * kernel * b.asDiagonal();
        out.marginal_violation = enforced_violation(out.plan, w, cfg);
        out.violation_history.push_back(out.marginal_violation);
        out.iterations_run = it + 1;
        if (out.marginal_violation <= cfg.tolerance)
            break;
    }
    out.log_a = a.array().log();
    out.log_b = b.array().log();
    return out;
}

TransportPlan sinkhorn_log_domain(const Matrix& cost, const Vector& w, const SinkhornConfig& cfg)
{
    check_inputs(cost, w, cfg);

    const auto n = cost.rows();
    const auto K = cost.cols();
    const double log_row_mass = -std::log(static_cast<double>(n));
    const Matrix log_kernel = -cost / cfg.epsilon;
    const Vector log_w = w.array().log();

    TransportPlan out;
    out.log_a = Vector::Zero(n);
    out.log_b = Vector::Zero(K);
    Matrix scratch(n, K);
    for (int it = 0; it < cfg.max_iterations; ++it) {
        scratch = log_kernel.rowwise() + out.log_b.transpose();
        for (Eigen::Index i = 0; i < n; ++i)
            out.log_a(i) = log_row_mass - logsumexp(scratch.row(i));
        if (cfg.update_columns) {
            scratch = log_kernel.colwise() + out.log_a;
            for (Eigen::Index k = 0; k < K; ++k)
                out.log_b(k) = log_w(k) - logsumexp(scratch.col(k));
        }
        out.plan = out.log_plan(cost, cfg.epsilon).array().exp();
        out.marginal_violation = enforced_violation(out.plan, w, cfg);
        out.violation_history.push_back(out.marginal_violation);
        out.iterations_run = it + 1;
        if (out.marginal_violation <= cfg.tolerance)
            break;
    }
    return out;
}

double ot_loss(const Matrix& plan, const Matrix& cost, double epsilon)
{
    if (plan.rows() != cost.rows() || plan.cols() != cost.cols())
        throw ShapeError("ot_loss: plan " + shape_string(plan) + " vs cost " + shape_string(cost));
    if ((plan.array() <= 0.0).any())
        throw ContractError("ot_loss: plan has a non-positive entry");
    const double transport = plan.cwiseProduct(cost).sum();
    const double entropy = (plan.array() * (plan.array().log() - 1.0)).sum();
    return transport + epsilon * entropy;
}

double ot_loss(const TransportPlan& plan, const Matrix& cost, double epsilon)
{
    if (plan.plan.rows() != cost.rows() || plan.plan.cols() != cost.cols())
        throw ShapeError("ot_loss: plan " + shape_string(plan.plan) + " vs cost " +
                         shape_string(cost));
    const Matrix lp = plan.log_plan(cost, epsilon);
    const double transport = plan.plan.cwiseProduct(cost).sum();
    const double entropy = (plan.plan.array() * (lp.array() - 1.0)).sum();
    return transport + epsilon * entropy;
}

Matrix ot_loss_grad_envelope(const TransportPlan& plan, double tolerance)
{
    if (!(plan.marginal_violation <= tolerance))
        throw ContractError("ot_loss_grad_envelope: plan not converged (violation " +
                            std::to_string(plan.marginal_violation) + ")");
    return plan.plan;
}

LpSolution exact_lp_oracle(const Matrix& cost, const Vector& w)
{
    const auto n = cost.rows();
    const auto K = cost.cols();
    if (n > 8 || K > 4)
        throw SizeError("exact_lp_oracle: instance " + shape_string(cost) +
                        " exceeds 8 x 4");
    validate_proportions(w, K);

    std::vector<int> remaining(static_cast<std::size_t>(K));
    for (Eigen::Index k = 0; k < K; ++k) {
        const double count = static_cast<double>(n) * w(k);
        const double rounded = std::round(count);
        if (std::abs(count - rounded) > 1e-9)
            throw ContractError("exact_lp_oracle: n * w_k must be integral");
        remaining[static_cast<std::size_t>(k)] = static_cast<int>(rounded);
    }

    const double inf = std::numeric_limits<double>::infinity();
    double best = inf;
    double runner_up = inf;
    std::vector<int> best_assignment;
    std::vector<int> current(static_cast<std::size_t>(n));

    // Depth-first over rows; clusters tried in increasing index so the first
    // optimum found is the lexicographically smallest.
    auto visit = [&](auto&& self, Eigen::Index row, double partial) -> void {
        if (row == n) {
            if (partial < best) {
                runner_up = best;
                best = partial;
                best_assignment = current;
            } else if (partial < runner_up) {
                runner_up = partial;
            }
            return;
        }
        for (Eigen::Index k = 0; k < K; ++k) {
            auto& slots = remaining[static_cast<std::size_t>(k)];
            if (slots == 0)
                continue;
            --slots;
            current[static_cast<std::size_t>(row)] = static_cast<int>(k);
            self(self, row + 1, partial + cost(row, k));
            ++slots;
        }
    };
    visit(visit, 0, 0.0);

    LpSolution out;
    const double mass = 1.0 / static_cast<double>(n);
    out.plan = Matrix::Zero(n, K);
    for (Eigen::Index i = 0; i < n; ++i)
        out.plan(i, best_assignment[static_cast<std::size_t>(i)]) = mass;
    out.objective = best * mass;
    out.runner_up = runner_up * mass;
    out.assignment = std::move(best_assignment);
    return out;
}

namespace {

TapedTransport finish_taped(const ad::Var& cost, const ad::Var& plan, const ad::Var& log_plan,
                            double epsilon, bool transport_cost_only)
{
    TapedTransport out;
    out.plan = plan;
    ad::Var transport = ad::sum(ad::mul(cost, plan));
    if (transport_cost_only) {
        out.loss = transport;
    } else {
        ad::Var entropy = ad::sum(ad::mul(plan, ad::add_scalar(log_plan, -1.0)));
        out.loss = ad::add(transport, ad::scale(entropy, epsilon));
    }
    return out;
}

}  // namespace

TapedTransport sinkhorn_taped(const ad::Var& cost, const Vector& w, const SinkhornConfig& cfg,
                              bool transport_cost_only)
{
    check_inputs(cost.value(), w, cfg);
    ad::Tape& tape = cost.tape();
    const auto n = cost.rows();
    const auto K = cost.cols();
    const double row_mass = 1.0 / static_cast<double>(n);
    const Vector* enforce = cfg.update_columns ? &w : nullptr;
    const Vector no_columns;

    int iterations = 0;
    double violation = 0.0;

    if (cfg.mode == SinkhornMode::log_domain) {
        ad::Var log_kernel = ad::scale(cost, -1.0 / cfg.epsilon);
        ad::Var log_w = tape.constant(w.array().log().matrix().transpose());
        ad::Var log_b = tape.constant(Matrix::Zero(1, K));
        ad::Var log_a;
        Matrix lp_value;
        for (int it = 0; it < cfg.max_iterations; ++it) {
            log_a = ad::add_scalar(
                ad::scale(ad::row_logsumexp(ad::add_row_vector(log_kernel, log_b)), -1.0),
                std::log(row_mass));
            if (cfg.update_columns)
                log_b = ad::sub(log_w, ad::col_logsumexp(ad::add_col_vector(log_kernel, log_a)));
            lp_value = (log_kernel.value().colwise() + log_a.value().col(0)).rowwise() +
                       log_b.value().row(0);
            violation = marginal_violation(lp_value.array().exp().matrix(),
                                           enforce ? *enforce : no_columns);
            iterations = it + 1;
            if (violation <= cfg.tolerance)
                break;
        }
        ad::Var log_plan = ad::add_row_vector(ad::add_col_vector(log_kernel, log_a), log_b);
        ad::Var plan = ad::exp(log_plan);
        TapedTransport out = finish_taped(cost, plan, log_plan, cfg.epsilon, transport_cost_only);
        out.iterations_run = iterations;
        out.marginal_violation = violation;
        return out;
    }

    ad::Var kernel = ad::exp(ad::scale(cost, -1.0 / cfg.epsilon));
    if (!kernel.value().allFinite())
        throw NumericalInstability("sinkhorn: exp(-C/epsilon) overflowed; use log-domain mode");
    ad::Var row_target = tape.constant(Matrix::Constant(n, 1, row_mass));
    ad::Var col_target = tape.constant(w.transpose());
    ad::Var b = tape.constant(Matrix::Ones(1, K));
    ad::Var a;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        a = ad::div(row_target, ad::row_sum(ad::mul(kernel, ad::broadcast_row(b, n))));
        if (!a.value().allFinite() || (a.value().array() <= 0.0).any())
            throw NumericalInstability(
                "sinkhorn: row scaling became non-finite (kernel underflow); use log-domain mode");
        if (cfg.update_columns) {
            b = ad::div(col_target, ad::col_sum(ad::mul(kernel, ad::broadcast_col(a, K))));
            if (!b.value().allFinite() || (b.value().array() <= 0.0).any())
                throw NumericalInstability(
                    "sinkhorn: column scaling became non-finite (kernel underflow); use "
                    "log-domain mode");
        }
        const Matrix plan_value = (kernel.value().array().colwise() * a.value().col(0).array())
                                      .rowwise() *
                                  b.value().row(0).array();
        violation = marginal_violation(plan_value, enforce ? *enforce : no_columns);
        iterations = it + 1;
        if (violation <= cfg.tolerance)
            break;
    }
    ad::Var plan = ad::mul(ad::mul(kernel, ad::broadcast_col(a, K)), ad::broadcast_row(b, n));
    ad::Var log_plan = ad::add_row_vector(
        ad::add_col_vector(ad::scale(cost, -1.0 / cfg.epsilon), ad::log(a)), ad::log(b));
    TapedTransport out = finish_taped(cost, plan, log_plan, cfg.epsilon, transport_cost_only);
    out.iterations_run = iterations;
    out.marginal_violation = violation;
    return out;
}

}  // namespace sinkclust
