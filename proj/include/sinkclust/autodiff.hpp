#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sinkclust/matrix.hpp"

/// Define-by-run reverse-mode differentiation over dense matrices.
///
/// A Tape records every operation applied to its Vars in execution order, so
/// parents always carry smaller ids than their children. `Tape::backward`
/// walks the record in reverse and accumulates adjoints additively: a node
/// consumed by several operations receives the sum of all contributions.
///
/// Tapes are single-owner and are rebuilt for every forward pass.
namespace sinkclust::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning Tape is alive.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    std::size_t id() const { return id_; }
    Tape& tape() const;
    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    /// Value of a 1x1 node.
    double scalar() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Adjoint accumulator handed to backward closures.
class GradientBuffer {
public:
    explicit GradientBuffer(const Tape& tape);

    /// True when node `id` lies on a path to some leaf.
    bool wants(std::size_t id) const;

    template <typename Expr>
    void add(std::size_t id, const Expr& grad)
    {
        if (!wants(id))
            return;
        Matrix& slot = grads_[id];
        if (slot.size() == 0)
            slot = grad;
        else
            slot += grad;
    }

    const Matrix& at(std::size_t id) const { return grads_[id]; }
    Matrix take(std::size_t id) { return std::move(grads_[id]); }

private:
    const Tape* tape_;
    std::vector<Matrix> grads_;
};

/// Result of a backward pass: d(loss)/d(node) for every node that needs one.
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(std::vector<Matrix> grads, std::vector<Eigen::Index> rows,
                       std::vector<Eigen::Index> cols);

    /// Gradient with respect to `v`; a zero matrix when `v` does not
    /// influence the loss.
    Matrix of(const Var& v) const;

private:
    std::vector<Matrix> grads_;
    std::vector<Eigen::Index> rows_;
    std::vector<Eigen::Index> cols_;
};

class Tape {
public:
    using BackwardFn = std::function<void(const Tape&, const Matrix& grad, GradientBuffer&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input (a parameter).
    Var leaf(Matrix value);
    /// Input whose gradient is never requested.
    Var constant(Matrix value);

    /// Records an operation. `parents` must already be on this tape.
    Var record(Matrix value, std::vector<std::size_t> parents, BackwardFn backward);

    /// Reverse sweep seeded with d(loss)/d(loss) = 1. Throws ContractError
    /// unless `loss` is 1x1.
    Gradients backward(const Var& loss) const;

    std::size_t size() const { return nodes_.size(); }
    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

private:
    struct Node {
        Matrix value;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// C(i,k) = sum_j (points(i,j) - centers(k,j))^2.
Var pairwise_sqdist(const Var& points, const Var& centers);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var exp(const Var& a);
/// Throws ContractError on any non-positive entry.
Var log(const Var& a);
/// Subgradient 0 at 0.
Var relu(const Var& a);

// Reductions.
Var row_sum(const Var& a);   ///< n x K -> n x 1
Var col_sum(const Var& a);   ///< n x K -> 1 x K
Var sum(const Var& a);       ///< -> 1 x 1
Var row_logsumexp(const Var& a);  ///< n x K -> n x 1, max-shifted
Var col_logsumexp(const Var& a);  ///< n x K -> 1 x K, max-shifted

// Broadcasting.
Var broadcast_col(const Var& column, Eigen::Index cols);  ///< n x 1 -> n x cols
Var broadcast_row(const Var& row, Eigen::Index rows);     ///< 1 x K -> rows x K
/// Adds a 1 x K row vector to every row of an n x K matrix.
Var add_row_vector(const Var& a, const Var& row);
/// Adds an n x 1 column vector to every column of an n x K matrix.
Var add_col_vector(const Var& a, const Var& column);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace sinkclust::ad
