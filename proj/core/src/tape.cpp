#include "tslab/tape.hpp"

#include <stdexcept>

namespace tslab {

Tensor Tape::watch(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("watch: undefined tensor");
  const int id = record("leaf", {}, BackwardFn{});
  is_leaf_[static_cast<std::size_t>(id)] = true;
  return attach(t.detached(), id);
}

int Tape::record(const char* kind, std::vector<int> inputs,
                 BackwardFn backward) {
  if (consumed_)
    throw std::logic_error("tape already consumed by backward()");
  for (int in : inputs)
    if (in < 0 || in >= static_cast<int>(nodes_.size()))
      throw std::logic_error("tape node input out of order");
  nodes_.push_back(Node{kind, std::move(inputs), std::move(backward)});
  grads_.emplace_back();
  is_leaf_.push_back(false);
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::attach(Tensor value, int node_id) {
  value.tape_ = this;
  value.node_ = node_id;
  return value;
}

void Tape::accumulate(int node_id, Tensor g) {
  Tensor& slot = grads_[static_cast<std::size_t>(node_id)];
  if (!slot.defined()) {
    slot = (g.store_.use_count() == 1) ? std::move(g) : g.clone();
    return;
  }
  if (slot.shape() != g.shape())
    throw std::logic_error("gradient shape mismatch on accumulate: " +
                           shape_str(slot.shape()) + " vs " +
                           shape_str(g.shape()));
  double* dst = slot.mutable_data();
  const double* src = g.data();
  const std::int64_t n = slot.size();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward() called twice on one tape");
  if (loss.tape() != this)
    throw std::invalid_argument("backward: loss is not on this tape");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, have " +
                                shape_str(loss.shape()));
  consumed_ = true;
  accumulate(loss.node(), Tensor::scalar(1.0));

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.defined() && node.backward) node.backward(g, *this);
    node.backward = BackwardFn{};  // release saved activations
    if (!is_leaf_[static_cast<std::size_t>(id)]) g = Tensor{};
  }
}

Tensor Tape::grad(const Tensor& leaf) const {
  if (leaf.tape() != this)
    throw std::invalid_argument("grad: tensor is not on this tape");
  const Tensor& g = grads_[static_cast<std::size_t>(leaf.node())];
  if (g.defined()) return g;
  return Tensor(leaf.shape());  // unreached: zero gradient
}

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t || !t->on_tape()) continue;
    if (tape && tape != t->tape())
      throw std::logic_error("op inputs belong to different tapes");
    tape = t->tape();
  }
  return tape;
}

}  // namespace tslab
