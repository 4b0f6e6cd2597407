#include "cseg/tape.hpp"

#include "cseg/errors.hpp"

#include <string>

namespace cseg {

Var Tape::constant(Tensor value) { return record("constant", std::move(value), false, nullptr); }

Var Tape::variable(Tensor value) { return record("variable", std::move(value), true, nullptr); }

Var Tape::record(const char* op, Tensor value, bool requires_grad, Backward backward) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape()) return n.grad;
    return Tensor(n.value.shape());
}

Tensor& Tape::grad_mut(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::backward(Var root) {
    if (!root.valid() || root.id >= static_cast<int>(nodes_.size())) throw UsageError("backward: invalid root");
    if (nodes_[root.id].value.size() != 1) {
        throw UsageError("backward: root must be scalar, got shape " + to_string(nodes_[root.id].value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    grad_mut(root)[0] = 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
    }
}

}  // namespace cseg
