#pragma once

#include <functional>
#include <vector>

#include "fiat/tensor.hpp"

namespace fiat {

class Tape;

/// Cheap handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode gradient tape over a fixed primitive set (see ops.hpp).
///
/// Nodes are recorded in forward order; since every node only references
/// earlier nodes, walking the records backward is a valid topological order
/// and touches every node exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node holding an externally owned value (copied in).
  /// Trainable leaves accumulate gradients during backward().
  Var leaf(Mat value, bool trainable = false);

  /// Constant leaf; never receives a gradient.
  Var constant(Mat value) { return leaf(std::move(value), false); }

  /// Distributes a node's gradient to its parents. Receives the tape and the
  /// node's accumulated gradient; only invoked when a gradient arrived.
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  /// Records an interior node.
  Var record(Mat value, bool requires_grad, BackwardFn backward);

  const Mat& value(const Var& v) const;
  bool requires_grad(const Var& v) const;

  /// Runs reverse-mode accumulation from a scalar loss recorded on this tape.
  /// Gradients of trainable leaves are then available through grad().
  void backward(const Var& loss);

  bool has_grad(const Var& v) const;
  const Mat& grad(const Var& v) const;

  /// Accumulation target used by op backward closures.
  void accumulate_grad(const Var& v, const Mat& g);

  size_t size() const { return nodes_.size(); }

  void check_owns(const Var& v, const char* what) const;

 private:
  struct Node {
    Mat value;
    Mat grad;  // empty until touched
    bool requires_grad = false;
    bool trainable = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

}  // namespace fiat
