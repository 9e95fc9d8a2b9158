#include "proxyattn/autograd.hpp"

#include <string>

namespace proxyattn {

namespace {
std::string& fault_op() {
    static std::string op;
    return op;
}
}  // namespace

void set_backward_fault(std::string_view op) { fault_op() = std::string(op); }

double backward_fault_factor(std::string_view op) {
    const auto& f = fault_op();
    return (!f.empty() && f == op) ? 1.5 : 1.0;
}

Parameter::Parameter(std::string n, Tensor v, bool t)
    : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())), trainable(t) {}

void Parameter::zero_grad() {
    if (grad.shape() != value.shape()) {
        grad = Tensor::zeros(value.shape());
    } else {
        std::fill(grad.storage().begin(), grad.storage().end(), 0.0);
    }
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
    if (!p.trainable) return constant(p.value);
    Node n;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    for (auto i : inputs) {
        if (i >= nodes_.size()) throw InvariantError("tape input recorded before it was produced");
        n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    }
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw InvariantError("backward: loss belongs to a different tape");
    if (nodes_[loss.id].value.numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(nodes_[loss.id].value.shape()));
    }
    last_visits_ = 0;
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        auto& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty()) continue;
        ++last_visits_;
        for (auto in : n.inputs) {
            if (in >= id) throw InvariantError("tape order violated: node consumes a later node");
        }
        if (n.param != nullptr) {
            auto& pg = n.param->grad;
            if (pg.shape() != n.value.shape()) pg = Tensor::zeros(n.value.shape());
            for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
        } else if (n.backward) {
            n.backward(*this, id);
        }
        // Interior gradients are dead once propagated.
        if (n.param == nullptr) n.grad = Tensor();
    }
}

}  // namespace proxyattn
