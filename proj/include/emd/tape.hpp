#pragma once

#include <functional>
#include <vector>

#include "emd/errors.hpp"
#include "emd/tensor.hpp"

namespace emd {

/// Reverse-mode autodiff tape. Nodes are appended in execution order, so a
/// reverse sweep over the node list is a valid topological order. Leaves are
/// registered explicitly; interior nodes carry a closure that receives the
/// node's own gradient and propagates it to the node's inputs.
template <typename T>
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

    struct Node {
        std::vector<std::size_t> shape;
        std::vector<T> grad;
        BackwardFn backward; // empty for leaves
    };

    /// Registers `t` as a leaf on this tape. Parameters pass
    /// requires_grad = true; plain inputs may pass false so nothing bothers
    /// accumulating into them.
    void leaf(Tensor<T>& t, bool requires_grad = true) {
        if (t.node >= 0 && t.tape == this) return;
        t.node = int(nodes_.size());
        t.tape = this;
        t.requires_grad = requires_grad;
        nodes_.push_back(Node{t.shape, {}, {}});
    }

    /// Appends an interior node and returns its index.
    int add_node(std::vector<std::size_t> shape, BackwardFn backward) {
        nodes_.push_back(Node{std::move(shape), {}, std::move(backward)});
        return int(nodes_.size()) - 1;
    }

    std::size_t size() const { return nodes_.size(); }

    std::vector<T>& grad_ref(int node) { return nodes_[std::size_t(node)].grad; }

    /// Runs the reverse sweep from a scalar loss. Gradients of every node are
    /// reset first, so calling backward twice does not double-count.
    void backward(const Tensor<T>& loss) {
        if (loss.tape != this || loss.node < 0)
            throw std::invalid_argument("backward: loss is not tracked on this tape");
        if (loss.numel() != 1)
            throw std::invalid_argument(
                msg("backward: loss must be scalar, got shape ", loss.shape_str()));
        for (Node& n : nodes_) {
            n.grad.assign(Tensor<T>::count(n.shape), T(0));
        }
        nodes_[std::size_t(loss.node)].grad[0] = T(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].backward) nodes_[i].backward(*this, nodes_[i].grad);
        }
        ran_backward_ = true;
    }

    /// Gradient of the loss w.r.t. `t`. Tensors that never influenced the
    /// loss (or were never tracked) get all-zero gradients.
    Tensor<T> grad(const Tensor<T>& t) const {
        Tensor<T> g(t.shape);
        if (t.tape == this && t.node >= 0 && ran_backward_) {
            const Node& n = nodes_[std::size_t(t.node)];
            if (!n.grad.empty()) g.data = n.grad;
        }
        return g;
    }

  private:
    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

/// Detaches a tensor from whatever tape it was tracked on.
template <typename T>
void detach(Tensor<T>& t) {
    t.node = -1;
    t.tape = nullptr;
    t.requires_grad = false;
}

} // namespace emd
