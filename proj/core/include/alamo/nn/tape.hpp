#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "alamo/nn/tensor.hpp"

namespace alamo::nn {

/// Handle to a node on a Tape.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;

    [[nodiscard]] bool valid() const { return id != npos; }
};

/// Per-pass workspace for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, which is therefore a topological
/// order; backward() walks it in reverse. External parameter tensors are
/// referenced, not copied, so they must outlive the tape. A tape belongs to a
/// single execution context.
template <typename T>
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor<T>& out_grad)>;

    explicit Tape(bool record = true) : record_(record) {}

    /// When false, ops compute values only and no gradient information is kept.
    [[nodiscard]] bool recording() const { return record_; }

    Var leaf(Tensor<T> value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), nullptr, {}, {}, requires_grad && record_, false});
        return Var{nodes_.size() - 1};
    }

    /// Differentiable leaf bound to an external tensor.
    Var parameter(const Tensor<T>& external) {
        nodes_.push_back(Node{{}, &external, {}, {}, record_, false});
        return Var{nodes_.size() - 1};
    }

    /// Appends an op result. `backward` receives the gradient w.r.t. this node
    /// and must accumulate into the parents that require grad.
    Var push(Tensor<T> value, std::initializer_list<Var> parents, Backward backward) {
        return push(std::move(value), std::vector<Var>(parents), std::move(backward));
    }
    Var push(Tensor<T> value, const std::vector<Var>& parents, Backward backward) {
#ifndef NDEBUG
        if (!value.all_finite()) throw NumericError("non-finite values produced on tape");
#endif
        bool rg = false;
        if (record_) {
            for (Var p : parents) rg = rg || node(p).requires_grad;
        }
        nodes_.push_back(Node{std::move(value), nullptr, {}, rg ? std::move(backward) : Backward{}, rg, false});
        return Var{nodes_.size() - 1};
    }

    [[nodiscard]] const Tensor<T>& value(Var v) const {
        const Node& n = node(v);
        return n.external ? *n.external : n.value;
    }

    [[nodiscard]] bool requires_grad(Var v) const { return node(v).requires_grad; }

    /// Gradient accumulator of `v`, allocated on first use; nullptr when `v` needs no gradient.
    Tensor<T>* grad_sink(Var v) {
        Node& n = node(v);
        if (!n.requires_grad) return nullptr;
        if (!n.has_grad) {
            n.grad = Tensor<T>(value(v).shape());
            n.has_grad = true;
        }
        return &n.grad;
    }

    /// Accumulated gradient; a zero tensor if nothing flowed into `v`.
    [[nodiscard]] Tensor<T> grad(Var v) const {
        const Node& n = node(v);
        return n.has_grad ? n.grad : Tensor<T>(value(v).shape());
    }

    /// Reverse sweep from `root` seeded with `seed` (same shape as root).
    void backward(Var root, const Tensor<T>& seed) {
        if (!record_) throw Error("backward on a non-recording tape");
        if (!root.valid() || root.id >= nodes_.size()) throw Error("backward before forward");
        if (seed.shape() != value(root).shape()) throw ShapeError("backward seed shape mismatch");
        Tensor<T>* g = grad_sink(root);
        if (!g) return;
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += seed[i];
        for (std::size_t id = root.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.has_grad || !n.backward) continue;
            n.backward(*this, n.grad);
        }
    }

    /// Scalar root convenience: seed 1.
    void backward(Var root) { backward(root, Tensor<T>(value(root).shape(), T{1})); }

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external;
        Tensor<T> grad;
        Backward backward;
        bool requires_grad;
        bool has_grad;
    };

    Node& node(Var v) {
        if (v.id >= nodes_.size()) throw Error("invalid tape variable");
        return nodes_[v.id];
    }
    const Node& node(Var v) const {
        if (v.id >= nodes_.size()) throw Error("invalid tape variable");
        return nodes_[v.id];
    }

    bool record_;
    std::vector<Node> nodes_;
};

}  // namespace alamo::nn
