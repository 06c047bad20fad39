#pragma once

#include "cxrssl/core/error.hpp"
#include "cxrssl/core/tensor.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace cxrssl::ag {

// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

// Reverse-mode recording of matrix operations. Nodes are appended in
// evaluation order, so a reverse sweep is a valid topological order.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat<T>& grad_out)>;

  Var leaf(Mat<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  Var constant(Mat<T> value) { return push(std::move(value), false, nullptr); }

  Var push(Mat<T> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat<T>(), requires_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  const Mat<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() target with respect to `v`; a zero matrix
  // when no gradient reached it.
  Mat<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Mat<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(Var v, const Mat<T>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  template <typename Fn>
  void accumulate_with(Var v, Fn&& fn) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
    fn(n.grad);
  }

  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw ShapeMismatch("backward() needs a scalar loss, got " + shape_str(value(loss)));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Mat<T>::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      const Mat<T> g = n.grad;
      n.backward(*this, g);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool requires_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

}  // namespace cxrssl::ag
