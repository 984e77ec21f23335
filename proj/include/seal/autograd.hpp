#pragma once

// Minimal tape-based reverse-mode differentiation over dense float64 tensors.
//
// A Tape owns every node created during one forward pass. Nodes are
// appended in evaluation order, so running their backward closures in
// reverse order is a valid topological sweep. Tensors carry no batch
// dimension; images are [C, H, W] and matrices are [rows, cols].

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace seal::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void(Node&)> backward;

    std::size_t size() const noexcept { return value.size(); }
    /// Zero-filled on first access.
    std::vector<double>& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Node* node) : node_(node) {}

    Node* node() const noexcept { return node_; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->value.size(); }
    const std::vector<double>& value() const { return node_->value; }
    double item() const { return node_->value.at(0); }
    bool requires_grad() const { return node_->requires_grad; }
    /// Gradient after Tape::backward; zeros if nothing flowed here.
    std::vector<double> grad() const;
    explicit operator bool() const noexcept { return node_ != nullptr; }

private:
    Node* node_ = nullptr;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Shape shape, std::vector<double> values, bool requires_grad);
    Var constant(Shape shape, std::vector<double> values) {
        return leaf(std::move(shape), std::move(values), false);
    }

    /// Node whose value is filled by the caller. Parents must already be on the tape.
    Var make(Shape shape, bool requires_grad);

    /// Reverse sweep seeded with d(root)/d(root) = 1. Root must be a scalar.
    void backward(Var root);

    std::size_t node_count() const noexcept { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

// Elementwise.
Var add(Tape& tape, Var a, Var b);
Var sub(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double c);
Var add_scalar(Tape& tape, Var a, double c);
Var square(Tape& tape, Var a);
Var silu(Tape& tape, Var a);
/// a * c with c a constant of the same size.
Var mul_const(Tape& tape, Var a, std::span<const double> c);
/// a / s with s a scalar Var.
Var div_scalar(Tape& tape, Var a, Var s);
Var reshape(Tape& tape, Var a, Shape shape);

// Reductions (scalar results, shape {1}).
Var sum(Tape& tape, Var a);
Var mean(Tape& tape, Var a);
/// Mean over elements of (a - target)^2.
Var mse(Tape& tape, Var a, std::span<const double> target);
/// Mean of several same-shaped Vars.
Var average(Tape& tape, std::span<const Var> parts);

// Image ops on [C, H, W].
Var conv2d(Tape& tape, Var x, Var weight, Var bias);  // weight [Co, Ci, k, k], same padding
Var group_norm(Tape& tape, Var x, int groups, Var gamma, Var beta, double eps = 1e-5);
Var avg_pool2(Tape& tape, Var x);
Var upsample2(Tape& tape, Var x);
Var concat_channels(Tape& tape, Var a, Var b);
Var add_channel_bias(Tape& tape, Var x, Var v);  // v [C] broadcast over H, W

// Matrix ops on [rows, cols].
Var linear(Tape& tape, Var x, Var weight, Var bias);  // x [n, in], weight [out, in], bias [out] or null
Var matmul(Tape& tape, Var a, Var b);                // [n, k] x [k, m]
Var matmul_nt(Tape& tape, Var a, Var b);             // [n, k] x [m, k]^T
Var transpose(Tape& tape, Var a);
Var softmax_rows(Tape& tape, Var a);
Var rms_norm_rows(Tape& tape, Var a, double eps = 1e-6);
Var slice_cols(Tape& tape, Var a, int begin, int end);
Var concat_cols(Tape& tape, std::span<const Var> parts);
Var column(Tape& tape, Var a, int j);  // [n, m] -> [n]
/// Rows `ids` of table [V, d]; row `override_row` (if >= 0) taken from `override_value` [d].
Var gather_rows(Tape& tape, Var table, std::span<const int> ids, int override_row = -1,
                Var override_value = Var());

}  // namespace seal::ad
