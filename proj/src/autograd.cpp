#include "melrefine/autograd.hpp"

#include <stdexcept>

namespace melrefine::ad {

const Tensor& Var::value() const {
    if (!tape_) throw std::logic_error("autograd: unbound variable");
    return tape_->value(*this);
}

bool Var::requires_grad() const {
    return tape_ && tape_->requires_grad(*this);
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, true, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) {
        if (in.tape() != this) throw std::logic_error("autograd: input from another tape");
        needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) {
        if (in.tape() != this) throw std::logic_error("autograd: input from another tape");
        needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_accumulator(const Var& v) {
    Node& node = nodes_.at(v.id());
    if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
        node.grad = Tensor(node.value.shape());
    }
    return node.grad;
}

Tensor Tape::grad(const Var& v) const {
    const Node& node = nodes_.at(v.id());
    if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
        return Tensor(node.value.shape());
    }
    return node.grad;
}

void Tape::backward(const Var& root) {
    Node& top = nodes_.at(root.id());
    if (top.value.size() != 1) throw std::invalid_argument("autograd: backward root must be a scalar");
    for (Node& node : nodes_) node.grad = Tensor();
    grad_accumulator(root)[0] = 1.0;

    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.backward || node.grad.empty()) continue;
        // Inputs always precede outputs, so the closure only touches earlier nodes.
        node.backward(*this, node.grad);
    }
}

}  // namespace melrefine::ad
