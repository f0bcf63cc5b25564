#pragma once

#include <functional>
#include <vector>

#include "tslab/tensor.hpp"

namespace tslab {

/// Reverse-mode gradient tape. Nodes are appended in execution order, so
/// ids are already a topological order; backward walks them once in
/// reverse, freeing saved values and non-leaf gradient buffers as it goes.
/// A tape serves exactly one forward+backward and is confined to a single
/// worker for that duration.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `t` as a differentiable leaf and returns a view bound to
  /// this tape. Leaf gradients survive backward() and are readable via
  /// grad().
  Tensor watch(const Tensor& t);

  /// Propagates from a scalar loss to every reachable leaf. Leaves the
  /// tape consumed: saved activations are released and a second call is
  /// an error.
  void backward(const Tensor& loss);

  /// Gradient of the loss w.r.t. a watched tensor; zeros if the leaf was
  /// never reached.
  Tensor grad(const Tensor& leaf) const;

  std::size_t node_count() const { return nodes_.size(); }

  // --- op-implementation interface ---
  using BackwardFn = std::function<void(const Tensor& upstream, Tape&)>;
  int record(const char* kind, std::vector<int> inputs, BackwardFn backward);
  Tensor attach(Tensor value, int node_id);
  // By value: a gradient whose storage is not shared elsewhere is adopted
  // without copying.
  void accumulate(int node_id, Tensor g);

 private:
  struct Node {
    const char* kind;
    std::vector<int> inputs;
    BackwardFn backward;  // empty for leaves
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> is_leaf_;
  bool consumed_ = false;
};

/// Tape shared by a set of op inputs: all on-tape inputs must agree.
/// Returns nullptr when no input is attached (pure eval path).
Tape* common_tape(std::initializer_list<const Tensor*> inputs);

}  // namespace tslab
