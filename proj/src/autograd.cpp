#include "crm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crm::ag {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), false, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), true, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::logic_error("ag: mixing variables from different tapes");
    needs = needs || requires_grad(p);
  }
  nodes_.push_back({std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var root) {
  const auto& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) throw std::logic_error("ag: backward root must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  Node& r = nodes_[static_cast<std::size_t>(root.id())];
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);
  for (auto i = static_cast<std::ptrdiff_t>(root.id()); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("ag::") + op + ": shape mismatch");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("ag::matmul: shape mismatch");
  return a.tape()->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("ag::matmul_nt: shape mismatch");
  return a.tape()->record(a.value() * b.value().transpose(), {a, b},
                          [a, b](Tape& t, const Matrix& g) {
                            if (t.requires_grad(a)) t.accumulate(a, g * b.value());
                            if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
                          });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("ag::add_row: shape mismatch");
  }
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var affine(Var x, Var weight, Var bias) { return add_row(matmul_nt(x, weight), bias); }

Var scale(Var a, double s) {
  return a.tape()->record(a.value() * s, {a},
                          [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var cwise_mul(Var a, Var b) {
  check_same_shape(a, b, "cwise_mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [a, b](Tape& t, const Matrix& g) {
                            if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
                            if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
                          });
}

Var sigmoid(Var a) {
  Matrix y = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  const int out_id = a.tape()->next_id();
  return a.tape()->record(std::move(y), {a}, [a, out_id](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(out_id);
    t.accumulate(a, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var log_clamped(Var a, double eps) {
  const Matrix& x = a.value();
  Matrix y = x.unaryExpr([eps](double v) { return std::log(std::clamp(v, eps, 1.0 - eps)); });
  return a.tape()->record(std::move(y), {a}, [a, eps](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix d = x.unaryExpr([eps](double v) { return (v < eps || v > 1.0 - eps) ? 0.0 : 1.0 / v; });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var one_minus(Var a) {
  Matrix y = (1.0 - a.value().array()).matrix();
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, -g); });
}

Var softmax_rows(Var a, const std::vector<bool>* column_mask) {
  const Matrix& x = a.value();
  if (column_mask && static_cast<Eigen::Index>(column_mask->size()) != x.cols()) {
    throw std::invalid_argument("ag::softmax_rows: mask length mismatch");
  }
  auto allowed = [column_mask](Eigen::Index c) {
    return column_mask == nullptr || (*column_mask)[static_cast<std::size_t>(c)];
  };
  bool any = false;
  for (Eigen::Index c = 0; c < x.cols(); ++c) any = any || allowed(c);
  if (!any) throw std::invalid_argument("ag::softmax_rows: every column is masked");

  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (allowed(c)) m = std::max(m, x(r, c));
    }
    double z = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (allowed(c)) {
        y(r, c) = std::exp(x(r, c) - m);
        z += y(r, c);
      }
    }
    y.row(r) /= z;
  }
  const int out_id = a.tape()->next_id();
  return a.tape()->record(std::move(y), {a}, [a, out_id](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(out_id);
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Matrix d = y.cwiseProduct((g.colwise() - dots));
    t.accumulate(a, d);
  });
}

Var hcat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("ag::hcat: nothing to concatenate");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("ag::hcat: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [saved](Tape& t, const Matrix& g) {
    Eigen::Index o = 0;
    for (const Var& p : saved) {
      t.accumulate(p, g.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
}

Var pool_segments(Var x, std::span<const Segment> segments) {
  const Matrix& v = x.value();
  const auto n = static_cast<Eigen::Index>(segments.size());
  Matrix out(n, v.cols());
  Eigen::MatrixXi arg(n, v.cols());
  for (Eigen::Index s = 0; s < n; ++s) {
    const Segment& seg = segments[static_cast<std::size_t>(s)];
    if (seg.start < 0 || seg.end > v.rows() || seg.start >= seg.end) {
      throw std::out_of_range("ag::pool_segments: segment outside input rows");
    }
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      Eigen::Index best = seg.start;
      for (Eigen::Index r = seg.start + 1; r < seg.end; ++r) {
        if (v(r, c) > v(best, c)) best = r;
      }
      out(s, c) = v(best, c);
      arg(s, c) = static_cast<int>(best);
    }
  }
  const Eigen::Index in_rows = v.rows();
  return x.tape()->record(std::move(out), {x}, [x, arg, in_rows](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(in_rows, g.cols());
    for (Eigen::Index s = 0; s < g.rows(); ++s) {
      for (Eigen::Index c = 0; c < g.cols(); ++c) d(arg(s, c), c) += g(s, c);
    }
    t.accumulate(x, d);
  });
}

Var colmax(Var x) {
  const Segment all{0, static_cast<int>(x.rows())};
  return pool_segments(x, std::span<const Segment>(&all, 1));
}

Var repeat_rows(Var row, Eigen::Index n) {
  if (row.rows() != 1) throw std::invalid_argument("ag::repeat_rows: expects a single row");
  Matrix out = row.value().replicate(n, 1);
  return row.tape()->record(std::move(out), {row}, [row](Tape& t, const Matrix& g) {
    t.accumulate(row, g.colwise().sum());
  });
}

Var entry(Var x, Eigen::Index r, Eigen::Index c) {
  Matrix out(1, 1);
  out(0, 0) = x.value()(r, c);
  const Eigen::Index rows = x.rows(), cols = x.cols();
  return x.tape()->record(std::move(out), {x}, [x, r, c, rows, cols](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(rows, cols);
    d(r, c) = g(0, 0);
    t.accumulate(x, d);
  });
}

}  // namespace crm::ag
