#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "psst/tensor.hpp"

namespace psst::ad {

class Tape;

// One value in the computation graph. Nodes are created by Tape ops in
// topological order; each parent edge carries the local-gradient closure
// that pulls this node's gradient into the parent's.
struct Node {
  Tensor value;
  Tensor grad;  // same shape as value, zero until backward
  bool requires_grad = false;

  struct Edge {
    Node* parent;
    // Accumulates into parent->grad given this node's grad.
    std::function<void(const Tensor& upstream, Tensor& parent_grad)> pull;
  };
  std::vector<Edge> parents;

  Node(Tensor v, bool rg)
      : value(std::move(v)), grad(value.shape()), requires_grad(rg) {}
};

// Dynamic define-by-run tape. Rebuilt every forward pass; captions have
// variable structure per gate decision, so no static graph. A tape and its
// nodes are confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Node* leaf(Tensor value, bool requires_grad);
  Node* constant(Tensor value) { return leaf(std::move(value), false); }

  // Elementwise suite. Shapes must match exactly; no broadcasting.
  Node* add(Node* a, Node* b);
  Node* sub(Node* a, Node* b);
  Node* mul(Node* a, Node* b);
  Node* scale(Node* a, double s);
  Node* add_scalar(Node* a, double s);
  Node* add_n(const std::vector<Node*>& terms);

  Node* matmul(Node* a, Node* b);

  Node* tanh(Node* a);
  Node* sigmoid(Node* a);
  Node* log(Node* a);
  Node* exp(Node* a);
  Node* relu(Node* a);

  // Softmax along `axis` with max-subtraction for stability. Rank 1 tensors
  // take axis 0; rank 2 tensors take axis 0 (down columns) or 1 (along rows).
  Node* softmax(Node* a, int axis);

  // Select entries by flat index; backward scatter-adds.
  Node* gather(Node* a, std::vector<std::size_t> indices);

  // Select row r of a rank-2 tensor as a [1, cols] node.
  Node* row(Node* a, std::size_t r);

  Node* sum(Node* a);
  Node* mean(Node* a);

  // Cosine similarity of two same-shaped tensors viewed flat; scalar output.
  Node* cosine(Node* a, Node* b);

  // Forward pass carries `forward_value`; backward passes gradients to
  // `bound` unchanged, as if bound's value had been emitted.
  Node* straight_through(Node* bound, Tensor forward_value);

  // Reverse sweep from a scalar root. Zeroes every gradient on the tape
  // first, then accumulates dRoot/dNode into each requires_grad node.
  void backward(Node* root);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  Node* emplace(Tensor value, bool rg);
  static void check_same_shape(const Node* a, const Node* b, const char* op);

  std::deque<Node> nodes_;
};

}  // namespace psst::ad
