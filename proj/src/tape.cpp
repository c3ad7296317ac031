#include "fiat/tape.hpp"

namespace fiat {

void Tape::check_owns(const Var& v, const char* what) const {
  require(v.tape == this && v.id >= 0 && static_cast<size_t>(v.id) < nodes_.size(),
          ErrorKind::TapeMismatch, std::string(what) + ": node was not recorded on this tape");
}

Var Tape::leaf(Mat value, bool trainable) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = trainable;
  node.trainable = trainable;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Mat value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Mat& Tape::value(const Var& v) const {
  check_owns(v, "value");
  return nodes_[v.id].value;
}

bool Tape::requires_grad(const Var& v) const {
  check_owns(v, "requires_grad");
  return nodes_[v.id].requires_grad;
}

bool Tape::has_grad(const Var& v) const {
  check_owns(v, "has_grad");
  return nodes_[v.id].grad.size() > 0;
}

const Mat& Tape::grad(const Var& v) const {
  check_owns(v, "grad");
  require(nodes_[v.id].grad.size() > 0, ErrorKind::TapeMismatch,
          "grad: node has no accumulated gradient");
  return nodes_[v.id].grad;
}

void Tape::accumulate_grad(const Var& v, const Mat& g) {
  check_owns(v, "accumulate_grad");
  Node& node = nodes_[v.id];
  if (!node.requires_grad) return;  // frozen parameters receive no gradient
  check_same_shape(node.value, g, "accumulate_grad");
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::backward(const Var& loss) {
  check_owns(loss, "backward");
  const Node& loss_node = nodes_[loss.id];
  require(is_scalar(loss_node.value), ErrorKind::ShapeMismatch,
          "backward: loss must be a 1x1 scalar, got " + shape_string(loss_node.value));
  require(loss_node.requires_grad, ErrorKind::TapeMismatch,
          "backward: loss does not depend on any trainable leaf");
  accumulate_grad(loss, Mat::Ones(1, 1));
  for (int i = loss.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, node.grad);
  }
}

}  // namespace fiat
