#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "bafo/tensor.hpp"

namespace bafo {

// The recorded operation vocabulary. Reverse-mode differentiation walks
// these nodes in reverse creation order.
enum class OpKind : std::uint8_t {
    Leaf,
    MatMul,
    Conv2d,
    ConvTranspose2d,
    Relu,
    LeakyRelu,
    Sigmoid,
    Exp,
    Add,
    Sub,
    Mul,
    Scale,
    Concat,
    Slice,
    Reshape,
    Sum,
    AddRowBias,
    AddChannelBias,
    SoftmaxXent,
};

const char* to_string(OpKind kind);

struct OpAttrs {
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    int axis = 0;
    std::int64_t start = 0;
    std::int64_t length = 0;
    double alpha = 0.0;       // leaky slope, or the factor of Scale
    Shape saved_shape;        // input shape for Sum/Slice/Reshape backward
};

// One recorded forward operation. `parents` holds the producing node id per
// input slot (-1 marks a constant input); `saved` holds the slot values plus
// any extra tensors the backward rule needs (e.g. a cached output).
struct TapeNode {
    OpKind op_kind;
    std::vector<int> parents;
    std::vector<Tensor> saved;
    OpAttrs attrs;
};

class Tape;

// A tensor flowing through a computation, optionally bound to a tape node.
// Constants participate in arithmetic but receive no gradient.
class Var {
public:
    Var() = default;
    static Var constant(Tensor value);

    const Tensor& value() const { return value_; }
    int node() const { return node_; }
    Tape* tape() const { return tape_; }

private:
    friend class Tape;
    friend Var make_op_var(Tape*, Tensor, int);

    Tensor value_;
    int node_ = -1;
    Tape* tape_ = nullptr;
};

// Define-by-run computation graph. Rebuilt for every forward pass and
// confined to one thread for its lifetime. Node ids grow in creation order,
// so parents always reference strictly earlier nodes.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a differentiable input. The tensor must require grad.
    Var leaf(const Tensor& value);

    // Gradient of a scalar loss with respect to every leaf, keyed by leaf
    // node id. Leaves the loss does not depend on map to zero tensors.
    std::unordered_map<int, Tensor> backward(const Var& loss) const;

    std::size_t node_count() const { return nodes_.size(); }
    const TapeNode& node(int id) const { return nodes_.at(id); }
    const std::vector<int>& leaf_ids() const { return leaf_ids_; }

    int record(TapeNode node);

private:
    std::vector<TapeNode> nodes_;
    std::vector<int> leaf_ids_;
};

// --- operation vocabulary -------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var conv2d(const Var& input, const Var& kernel, std::int64_t stride,
           std::int64_t padding);
Var conv_transpose2d(const Var& input, const Var& kernel, std::int64_t stride,
                     std::int64_t padding);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double alpha);
Var sigmoid(const Var& x);
Var exp(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& x, int axis, std::int64_t start, std::int64_t length);
Var reshape(const Var& x, const Shape& new_shape);
Var sum(const Var& x);
Var add_row_bias(const Var& x, const Var& bias);       // [N,F] + [F]
Var add_channel_bias(const Var& x, const Var& bias);   // [N,C,H,W] + [C]
// Mean over rows of -log softmax(logits)[target]; `onehot` rows sum to 1.
Var softmax_cross_entropy(const Var& logits, const Var& onehot);

// Conv output side length, or the transpose-conv inverse.
std::int64_t conv_out_side(std::int64_t in, std::int64_t k, std::int64_t stride,
                           std::int64_t padding);
std::int64_t conv_transpose_out_side(std::int64_t in, std::int64_t k,
                                     std::int64_t stride, std::int64_t padding);

// --- finite-difference verification ---------------------------------------

// Builds a scalar loss from leaf vars; used by grad_check to re-evaluate the
// function at perturbed inputs.
using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central-difference check of every backward rule reachable from `fn`.
// Requires 64-bit mode. Returns the maximum relative error over all input
// coordinates, with denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const TapeFn& fn, const std::vector<Tensor>& inputs,
                  double eps);

}  // namespace bafo
