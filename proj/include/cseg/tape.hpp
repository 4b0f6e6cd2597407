#pragma once

#include "cseg/tensor.hpp"

#include <functional>
#include <vector>

namespace cseg {

// Handle to a node recorded on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode recording. Nodes are appended in evaluation order; backward()
// walks them in reverse and calls each node's closure with the node's output
// gradient; the closure accumulates into its inputs via grad_mut().
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    Var constant(Tensor value);
    Var variable(Tensor value);

    // Stores an op result. Throws NumericError if any value is NaN/Inf.
    Var record(const char* op, Tensor value, bool requires_grad, Backward backward);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    // Gradient of the last backward root w.r.t. v (zeros if v was unreached).
    Tensor grad(Var v) const;
    // Lazily zero-initialised gradient buffer used by backward closures.
    Tensor& grad_mut(Var v);

    // Root must hold exactly one value; throws UsageError otherwise.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

template <typename... Vars>
bool any_requires_grad(const Tape& t, Vars... vs) {
    return (t.requires_grad(vs) || ...);
}

}  // namespace cseg
