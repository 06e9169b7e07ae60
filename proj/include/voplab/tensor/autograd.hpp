#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// Each op returns a Var whose node remembers its inputs and a backward rule
// when grad mode is on and at least one input requires gradients. backward()
// walks the recorded graph once in reverse topological order, accumulates
// gradients into leaves and then releases the intermediate graph.
//
// Broadcasting is limited to a leading batch: in binary elementwise ops the
// second operand's shape must equal the first's or be a suffix of it.

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "voplab/tensor/tensor.hpp"

namespace voplab {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until materialized
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    // Parameters are updated in place by optimizers.
    Tensor<T>& value_mut() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t numel() const { return node_->value.numel(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    const Tensor<T>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad = Tensor<T>(); }

    const std::string& op() const { return node_->op; }
    std::vector<Var> parents() const;
    const void* id() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
    return Var<T>(std::move(value), false);
}

// Consumes the graph below `loss` and returns the leaves that received a
// gradient. Throws ShapeError if `loss` is not a single value.
template <typename T>
std::vector<Var<T>> backward(const Var<T>& loss);

// ---- elementwise -----------------------------------------------------------
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> clamp_max(const Var<T>& a, T limit);

// ---- linear algebra --------------------------------------------------------
// a: (..., m, k). b: (k, n) shared across the batch, or (..., k, n) with the
// same leading dims as a. With transpose_b, b is (n, k) / (..., n, k).
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_b = false);

// ---- normalization / activations over an axis ------------------------------
template <typename T> Var<T> softmax(const Var<T>& x, int axis = -1);
template <typename T> Var<T> log_softmax(const Var<T>& x, int axis = -1);
// Over the last axis; gamma/beta have shape (D).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
// Unit L2 norm over the last axis. Throws std::domain_error on a zero vector.
template <typename T> Var<T> l2_normalize(const Var<T>& x);

// ---- reductions --------------------------------------------------------------
template <typename T> Var<T> mean(const Var<T>& x, int axis);
template <typename T> Var<T> sum_all(const Var<T>& x);
template <typename T> Var<T> mean_all(const Var<T>& x);

// ---- indexing / layout -----------------------------------------------------
// table: (V, D); result shape ids_shape + (D).
template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<int>& ids, const Shape& ids_shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int axis);
template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::size_t start, std::size_t length);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm);
// Repeats x along a new leading axis of size n.
template <typename T> Var<T> expand(const Var<T>& x, std::size_t n);
// (n, n) -> (n)
template <typename T> Var<T> diagonal(const Var<T>& x);
// x: (B, S, D), rows[b] < S -> (B, D)
template <typename T> Var<T> take_rows(const Var<T>& x, const std::vector<std::size_t>& rows);

// Normalizes a possibly negative axis against a rank.
std::size_t resolve_axis(int axis, std::size_t rank, const char* op);

}  // namespace voplab
