#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "proxyattn/tensor.hpp"

namespace proxyattn {

// A named trainable (or frozen) tensor. `grad` always has the same shape as
// `value` and accumulates across backward passes until zeroed.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value, bool trainable = true);

    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    void zero_grad();
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

// Reverse-mode autodiff tape. Nodes are appended in creation order, so an
// input's id is always smaller than its consumer's; backward() walks ids in
// reverse, which is a valid reverse topological order.
class Tape {
public:
    // Accumulates gradients of the node's output into its inputs' grads.
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Frozen parameters enter the tape as constants.
    Var param(Parameter& p);
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    // Gradient buffer of a node, allocated as zeros on first access.
    Tensor& grad(std::size_t id);
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

    std::size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and propagates to every reachable Parameter.
    void backward(Var loss);

    // Number of nodes whose backward rule ran in the last backward().
    std::size_t last_backward_visits() const { return last_visits_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::size_t last_visits_ = 0;
};

// Test hook: when set to an op name ("matmul", "softmax", "layer_norm",
// "linear", ...), that op's backward rule scales its input gradients by 1.5.
// Used to prove that gradient checking catches a broken rule.
void set_backward_fault(std::string_view op);
double backward_fault_factor(std::string_view op);

}  // namespace proxyattn
