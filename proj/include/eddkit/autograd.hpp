#pragma once

// Reverse-mode differentiation over dense tensors. Every op records a node
// holding its value, its inputs and a closure that pushes the node's gradient
// back into its inputs. backward() replays the closures in reverse
// topological order.

#include "eddkit/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace edd {

struct Node {
    Tensor value;
    Tensor grad; // empty until something flows into it
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    bool requires_grad = false;

    // Gradient buffer, zero-initialised on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->grad_buffer(); }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const noexcept { return static_cast<bool>(node_); }

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Records an op. The closure is dropped (and the result treated as a
// constant) when no input needs a gradient or recording is disabled.
Var record(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
// Throws if the loss is not a single element.
void backward(const Var& loss);

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

struct Parameter {
    std::string name;
    Var var;
};

// ---- ops ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);    // [m x k] * [k x n]
Var matmul_nt(const Var& a, const Var& b); // [m x k] * [n x k]^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row); // broadcast a [1 x n] row over [m x n]
Var scale(const Var& a, double c);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var softmax_rows(const Var& a);
Var concat_cols(const Var& a, const Var& b);
Var stack_rows(std::span<const Var> rows);
Var gather_rows(const Var& table, std::span<const int> ids);
Var sum(const Var& a);
Var constant(Tensor value);

} // namespace edd
