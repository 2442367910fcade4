#include "sinkclust/autodiff.hpp"

#include <cmath>
#include <string>

#include "sinkclust/errors.hpp"

namespace sinkclust::ad {

namespace {

Tape& common_tape(const Var& a, const Var& b)
{
    if (&a.tape() != &b.tape())
        throw ContractError("autodiff: operands live on different tapes");
    return a.tape();
}

void require_same_shape(const char* op, const Var& a, const Var& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
}

// Max-shifted log-sum-exp of a row/column expression.
template <typename Row>
double logsumexp(const Row& x)
{
    const double m = x.maxCoeff();
    if (!std::isfinite(m))
        return m;
    return m + std::log((x.array() - m).exp().sum());
}

}  // namespace

Tape& Var::tape() const
{
    if (tape_ == nullptr)
        throw ContractError("autodiff: use of an unbound Var");
    return *tape_;
}

const Matrix& Var::value() const
{
    return tape().value(id_);
}

double Var::scalar() const
{
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1)
        throw ContractError("autodiff: scalar() on a " + shape_string(v) + " node");
    return v(0, 0);
}

GradientBuffer::GradientBuffer(const Tape& tape) : tape_(&tape), grads_(tape.size()) {}

bool GradientBuffer::wants(std::size_t id) const
{
    return tape_->needs_grad(id);
}

Gradients::Gradients(std::vector<Matrix> grads, std::vector<Eigen::Index> rows,
                     std::vector<Eigen::Index> cols)
    : grads_(std::move(grads)), rows_(std::move(rows)), cols_(std::move(cols))
{
}

Matrix Gradients::of(const Var& v) const
{
    const auto id = v.id();
    if (id >= grads_.size())
        throw ContractError("autodiff: Var does not belong to this backward pass");
    if (grads_[id].size() == 0)
        return Matrix::Zero(rows_[id], cols_[id]);
    return grads_[id];
}

Var Tape::leaf(Matrix value)
{
    nodes_.push_back(Node{std::move(value), {}, nullptr, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value)
{
    nodes_.push_back(Node{std::move(value), {}, nullptr, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<std::size_t> parents, BackwardFn backward)
{
    bool needs = false;
    for (auto p : parents) {
        if (p >= nodes_.size())
            throw ContractError("autodiff: parent recorded after child");
        needs = needs || nodes_[p].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), needs});
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const
{
    if (&loss.tape() != this)
        throw ContractError("autodiff: loss belongs to another tape");
    const Matrix& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1)
        throw ContractError("autodiff: backward needs a 1x1 loss, got " + shape_string(lv));

    GradientBuffer buffer(*this);
    buffer.add(loss.id(), Matrix::Ones(1, 1));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!node.needs_grad || !node.backward || buffer.at(id).size() == 0)
            continue;
        node.backward(*this, buffer.at(id), buffer);
    }

    std::vector<Matrix> grads(nodes_.size());
    std::vector<Eigen::Index> rows(nodes_.size());
    std::vector<Eigen::Index> cols(nodes_.size());
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        rows[id] = nodes_[id].value.rows();
        cols[id] = nodes_[id].value.cols();
        if (id <= loss.id())
            grads[id] = buffer.take(id);
    }
    return Gradients(std::move(grads), std::move(rows), std::move(cols));
}

Var matmul(const Var& a, const Var& b)
{
    Tape& t = common_tape(a, b);
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + shape_string(a.value()) + " x " + shape_string(b.value()));
    Matrix out = a.value() * b.value();
    const auto ia = a.id(), ib = b.id();
    return t.record(std::move(out), {ia, ib},
                    [ia, ib](const Tape& tape, const Matrix& g, GradientBuffer& buf) {
                        if (buf.wants(ia))
                            buf.add(ia, g * tape.value(ib).transpose());
                        if (buf.wants(ib))
                            buf.add(ib, tape.value(ia).transpose() * g);
                    });
}

Var pairwise_sqdist(const Var& points, const Var& centers)
{
    Tape& t = common_tape(points, centers);
    const Matrix& z = points.value();
    const Matrix& mu = centers.value();
    if (z.cols() != mu.cols())
        throw ShapeError("pairwise_sqdist: feature dims " + std::to_string(z.cols()) + " vs " +
                         std::to_string(mu.cols()));
    Matrix out(z.rows(), mu.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index k = 0; k < mu.rows(); ++k)
            out(i, k) = (z.row(i) - mu.row(k)).squaredNorm();
    const auto iz = points.id(), im = centers.id();
    return t.record(std::move(out), {iz, im},
                    [iz, im](const Tape& tape, const Matrix& g, GradientBuffer& buf) {
                        const Matrix& zv = tape.value(iz);
                        const Matrix& mv = tape.value(im);
                        if (buf.wants(iz)) {
                            Matrix dz = 2.0 * (g.rowwise().sum().asDiagonal() * zv - g * mv);
                            buf.add(iz, dz);
                        }
                        if (buf.wants(im)) {
                            Matrix dm = 2.0 * (g.colwise().sum().transpose().asDiagonal() * mv -
                                               g.transpose() * zv);
                            buf.add(im, dm);
                        }
                    });
}

Var add(const Var& a, const Var& b)
{
    Tape& t = common_tape(a, b);
    require_same_shape("add", a, b);
    const auto ia = a.id(), ib = b.id();
    return t.record(a.value() + b.value(), {ia, ib},
                    [ia, ib](const Tape&, const Matrix& g, GradientBuffer& buf) {
                        buf.add(ia, g);
                        buf.add(ib, g);
                    });
}

Var sub(const Var& a, const Var& b)
{
    Tape& t = common_tape(a, b);
    require_same_shape("sub", a, b);
    const auto ia = a.id(), ib = b.id();
    return t.record(a.value() - b.value(), {ia, ib},
                    [ia, ib](const Tape&, const Matrix& g, GradientBuffer& buf) {
                        buf.add(ia, g);
                        if (buf.wants(ib))
                            buf.add(ib, -g);
                    });
}

Var mul(const Var& a, const Var& b)
{
    Tape& t = common_tape(a, b);
    require_same_shape("mul", a, b);
    const auto ia = a.id(), ib = b.id();
    return t.record(a.value().cwiseProduct(b.value()), {ia, ib},
                    [ia, ib](const Tape& tape, const Matrix& g, GradientBuffer& buf) {
                        if (buf.wants(ia))
                            buf.add(ia, g.cwiseProduct(tape.value(ib)));
                        if (buf.wants(ib))
                            buf.add(ib, g.cwiseProduct(tape.value(ia)));
                    });
}

Var div(const Var& a, const Var& b)
{
    Tape& t = common_tape(a, b);
    require_same_shape("div", a, b);
    const auto ia = a.id(), ib = b.id();
    return t.record(a.value().cwiseQuotient(b.value()), {ia, ib},
                    [ia, ib](const Tape& tape, const Matrix& g, GradientBuffer& buf) {
                        const Matrix& bv = tape.value(ib);
                        if (buf.wants(ia))
                            buf.add(ia, g.cwiseQuotient(bv));
                        if (buf.wants(ib)) {
                            Matrix d = -(g.array() * tape.value(ia).array() / bv.array().square());
                            buf.add(ib, d);
                        }
                    });
}

Var scale(const Var& a, double factor)
{
    const auto ia = a.id();
    return a.tape().record(factor * a.value(), {ia},
                           [ia, factor](const Tape&, const Matrix& g, GradientBuffer& buf) {
                               buf.add(ia, factor * g);
                           });
}

Var add_scalar(const Var& a, double offset)
{
    const auto ia = a.id();
    Matrix out = a.value().array() + offset;
    return a.tape().record(std::move(out), {ia},
                           [ia](const Tape&, const Matrix& g, GradientBuffer& buf) {
                               buf.add(ia, g);
                           });
}

Var exp(const Var& a)
{
    Tape& t = a.tape();
    const auto ia = a.id();
    Matrix out = a.value().array().exp();
    const auto out_id = t.size();
    return t.record(std::move(out), {ia},
                    [ia, out_id](const Tape& tape, const Matrix& g, GradientBuffer& buf) {
                        buf.add(ia, g.cwiseProduct(tape.value(out_id)));
                    });
}

Var log(const Var& a)
{
    if ((a.value().array() <= 0.0).any())
        throw ContractError("autodiff: log of a non-positive entry");
    const auto ia = a.id();
    Matrix out = a.value().array().log();
    return a.tape().record(std::move(out), {ia},
                           [ia](const Tape& tape, const Matrix& g, GradientBuffer& buf) {
                               buf.add(ia, g.cwiseQuotient(tape.value(ia)));
                           });
}

Var relu(const Var& a)
{
    const auto ia = a.id();
    Matrix out = a.value().cwiseMax(0.0);
    return a.tape().record(std::move(out), {ia},
                           [ia](const Tape& tape, const Matrix& g, GradientBuffer& buf) {
                               Matrix d = (tape.value(ia).array() > 0.0).select(g.array(), 0.0);
                               buf.add(ia, d);
                           });
}

Var row_sum(const Var& a)
{
    const auto ia = a.id();
    const auto cols = a.cols();
    Matrix out = a.value().rowwise().sum();
    return a.tape().record(std::move(out), {ia},
                           [ia, cols](const Tape&, const Matrix& g, GradientBuffer& buf) {
                               buf.add(ia, g.replicate(1, cols));
                           });
}

Var col_sum(const Var& a)
{
    const auto ia = a.id();
    const auto rows = a.rows();
    Matrix out = a.value().colwise().sum();
    return a.tape().record(std::move(out), {ia},
                           [ia, rows](const Tape&, const Matrix& g, GradientBuffer& buf) {
                               buf.add(ia, g.replicate(rows, 1));
                           });
}

Var sum(const Var& a)
{
    const auto ia = a.id();
    const auto rows = a.rows(), cols = a.cols();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape().record(std::move(out), {ia},
                           [ia, rows, cols](const Tape&, const Matrix& g, GradientBuffer& buf) {
                               buf.add(ia, Matrix::Constant(rows, cols, g(0, 0)));
                           });
}

Var row_logsumexp(const Var& a)
{
    const Matrix& x = a.value();
    Matrix out(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out(i, 0) = logsumexp(x.row(i));
    const auto ia = a.id();
    const auto out_id = a.tape().size();
    return a.tape().record(std::move(out), {ia},
                           [ia, out_id](const Tape& tape, const Matrix& g, GradientBuffer& buf) {
                               const Matrix& xv = tape.value(ia);
                               const Matrix& lse = tape.value(out_id);
                               Matrix soft = (xv.colwise() - lse.col(0)).array().exp();
                               Matrix d = soft.array().colwise() * g.col(0).array();
                               buf.add(ia, d);
                           });
}

Var col_logsumexp(const Var& a)
{
    const Matrix& x = a.value();
    Matrix out(1, x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k)
        out(0, k) = logsumexp(x.col(k));
    const auto ia = a.id();
    const auto out_id = a.tape().size();
    return a.tape().record(std::move(out), {ia},
                           [ia, out_id](const Tape& tape, const Matrix& g, GradientBuffer& buf) {
                               const Matrix& xv = tape.value(ia);
                               const Matrix& lse = tape.value(out_id);
                               Matrix soft = (xv.rowwise() - lse.row(0)).array().exp();
                               Matrix d = soft.array().rowwise() * g.row(0).array();
                               buf.add(ia, d);
                           });
}

Var broadcast_col(const Var& column, Eigen::Index cols)
{
    if (column.cols() != 1)
        throw ShapeError("broadcast_col: expected n x 1, got " + shape_string(column.value()));
    const auto ic = column.id();
    Matrix out = column.value().replicate(1, cols);
    return column.tape().record(std::move(out), {ic},
                                [ic](const Tape&, const Matrix& g, GradientBuffer& buf) {
                                    buf.add(ic, g.rowwise().sum());
                                });
}

Var broadcast_row(const Var& row, Eigen::Index rows)
{
    if (row.rows() != 1)
        throw ShapeError("broadcast_row: expected 1 x K, got " + shape_string(row.value()));
    const auto ir = row.id();
    Matrix out = row.value().replicate(rows, 1);
    return row.tape().record(std::move(out), {ir},
                             [ir](const Tape&, const Matrix& g, GradientBuffer& buf) {
                                 buf.add(ir, g.colwise().sum());
                             });
}

Var add_row_vector(const Var& a, const Var& row)
{
    Tape& t = common_tape(a, row);
    if (row.rows() != 1 || row.cols() != a.cols())
        throw ShapeError("add_row_vector: " + shape_string(a.value()) + " + " +
                         shape_string(row.value()));
    Matrix out = a.value().rowwise() + row.value().row(0);
    const auto ia = a.id(), ir = row.id();
    return t.record(std::move(out), {ia, ir},
                    [ia, ir](const Tape&, const Matrix& g, GradientBuffer& buf) {
                        buf.add(ia, g);
                        if (buf.wants(ir))
                            buf.add(ir, g.colwise().sum());
                    });
}

Var add_col_vector(const Var& a, const Var& column)
{
    Tape& t = common_tape(a, column);
    if (column.cols() != 1 || column.rows() != a.rows())
        throw ShapeError("add_col_vector: " + shape_string(a.value()) + " + " +
                         shape_string(column.value()));
    Matrix out = a.value().colwise() + column.value().col(0);
    const auto ia = a.id(), ic = column.id();
    return t.record(std::move(out), {ia, ic},
                    [ia, ic](const Tape&, const Matrix& g, GradientBuffer& buf) {
                        buf.add(ia, g);
                        if (buf.wants(ic))
                            buf.add(ic, g.rowwise().sum());
                    });
}

}  // namespace sinkclust::ad
