#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffq/tensor.hpp"

namespace diffq::ad {

class Tape;

/// Handle to a node recorded on a Tape. Only meaningful for the tape that issued it.
struct Var {
    std::size_t id = 0;
    friend bool operator==(Var, Var) = default;
};

/// Everything an adjoint rule sees when it runs.
struct AdjointArgs {
    std::span<const Tensor* const> inputs;
    const Tensor& output;
    const Tensor& out_grad;
    /// One slot per input; null when that input does not require a gradient.
    std::span<Tensor* const> in_grads;
};

using AdjointFn = std::function<void(const AdjointArgs&)>;

/*!
 * Reverse-mode tape.
 *
 * Nodes are append-only and addressed by Var. Operations are recorded in
 * execution order, so every input id is smaller than its output id and a
 * single reverse sweep visits each adjoint once.
 */
class Tape {
  public:
    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Records an operation whose forward value is already computed.
    Var record(std::string_view op, std::vector<Var> inputs, Tensor value, AdjointFn adjoint);

    const Tensor& value(Var v) const { return node(v).value; }
    const Tensor& grad(Var v) const { return node(v).grad; }
    bool requires_grad(Var v) const { return node(v).requires_grad; }

    /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node.
    void backward(Var loss);
    void zero_grad();

    std::size_t num_nodes() const noexcept { return nodes_.size(); }
    std::size_t num_ops() const noexcept { return ops_.size(); }
    /// Adjoint invocations performed by all backward() calls so far.
    std::size_t adjoint_calls() const noexcept { return adjoint_calls_; }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
    };
    struct Op {
        std::string name;
        std::vector<Var> inputs;
        Var output;
        AdjointFn adjoint;
    };

    const Node& node(Var v) const;
    Node& node(Var v);

    std::deque<Node> nodes_;
    std::vector<Op> ops_;
    std::size_t adjoint_calls_ = 0;
};

// Shape rules are noted per op; any mismatch throws ShapeError naming the op.

/// (n,k) x (k,m) -> (n,m)
Var matmul(Tape& t, Var a, Var b);
/// Elementwise, identical shapes.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
/// c * a for a constant c.
Var scale(Tape& t, Var a, double c);
/// x (n,m) + bias (m), bias broadcast over rows.
Var add_bias(Tape& t, Var x, Var bias);
Var relu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
/// Any shape -> (1)
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
/// mean((a - b)^2), identical shapes -> (1)
Var mse_loss(Tape& t, Var a, Var b);
/// Mean negative log-likelihood of labels under softmax(logits); logits (n,k), labels in [0,k).
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels);
Var reciprocal(Tape& t, Var a);
/// 2^a elementwise.
Var exp2(Tape& t, Var a);
/// x (ngroups) -> out_shape, out[i] = x[i / group_size] over the flattened output.
Var expand_groups(Tape& t, Var x, std::size_t group_size, const Shape& out_shape);

}  // namespace diffq::ad
