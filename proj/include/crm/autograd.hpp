#pragma once

// Minimal reverse-mode differentiation over dense double matrices. A Tape
// records every operation; backward() walks it once in reverse.

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "crm/proposals.hpp"

namespace crm::ag {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  // Records an op output. `backward` runs only if some parent needs a gradient.
  Var record(Matrix value, std::span<const Var> parents, Backward backward);
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  // Id the next recorded node will receive.
  int next_id() const { return static_cast<int>(nodes_.size()); }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }

  // Adds `delta` into the gradient of `v` (no-op for constants).
  template <class Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[static_cast<std::size_t>(v.id())];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = delta;
    } else {
      n.grad += delta;
    }
  }

  // Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(Var root);

  // Gradient of the last backward() root with respect to `v` (zeros if unreached).
  Matrix grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// a * b
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// a + row broadcast to every row
Var add_row(Var a, Var row);
// x * W^T + b
Var affine(Var x, Var weight, Var bias);
Var scale(Var a, double s);
Var cwise_mul(Var a, Var b);
Var sigmoid(Var a);
// log(clamp(a, eps, 1 - eps)); gradient is zero where clamped.
Var log_clamped(Var a, double eps);
Var one_minus(Var a);
// Row-wise softmax; columns with mask[c] == false get weight exactly 0.
Var softmax_rows(Var a, const std::vector<bool>* column_mask = nullptr);
Var hcat(std::span<const Var> parts);
// Row r of the result is the column-wise max of rows [seg.start, seg.end).
Var pool_segments(Var x, std::span<const Segment> segments);
Var colmax(Var x);
Var repeat_rows(Var row, Eigen::Index n);
Var entry(Var x, Eigen::Index r, Eigen::Index c);

}  // namespace crm::ag
