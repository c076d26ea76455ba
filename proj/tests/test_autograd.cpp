#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "crm/autograd.hpp"
#include "support.hpp"

using namespace crm;
using crm::testing::random_matrix;

namespace {

using Fn = std::function<ag::Var(ag::Tape&, std::vector<ag::Var>&)>;

// Scalar probe: sum(R .* f(inputs)) for a fixed random R.
double probe(const Fn& f, const std::vector<Matrix>& inputs, const Matrix* weights,
             std::vector<Matrix>* grads) {
  ag::Tape tape;
  std::vector<ag::Var> vars;
  for (const auto& m : inputs) vars.push_back(grads ? tape.variable(m) : tape.constant(m));
  ag::Var out = f(tape, vars);
  ag::Var weighted = ag::cwise_mul(out, tape.constant(*weights));
  ag::Var total = ag::matmul(ag::matmul(tape.constant(Matrix::Ones(1, out.rows())), weighted),
                             tape.constant(Matrix::Ones(out.cols(), 1)));
  if (grads) {
    tape.backward(total);
    grads->clear();
    for (const auto& v : vars) grads->push_back(tape.grad(v));
  }
  return total.scalar();
}

void check_gradient(const Fn& f, std::vector<Matrix> inputs, std::uint64_t seed = 1,
                    double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  ag::Tape shape_tape;
  std::vector<ag::Var> shape_vars;
  for (const auto& m : inputs) shape_vars.push_back(shape_tape.constant(m));
  const ag::Var out = f(shape_tape, shape_vars);
  const Matrix weights = random_matrix(static_cast<int>(out.rows()), static_cast<int>(out.cols()), rng);

  std::vector<Matrix> analytic;
  probe(f, inputs, &weights, &analytic);
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ASSERT_EQ(analytic[i].rows(), inputs[i].rows());
    ASSERT_EQ(analytic[i].cols(), inputs[i].cols());
    for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
        auto plus = inputs, minus = inputs;
        plus[i](r, c) += h;
        minus[i](r, c) -= h;
        const double numeric =
            (probe(f, plus, &weights, nullptr) - probe(f, minus, &weights, nullptr)) / (2 * h);
        ASSERT_NEAR(analytic[i](r, c), numeric, tol * std::max(1.0, std::abs(numeric)))
            << "input " << i << " (" << r << "," << c << ")";
      }
    }
  }
}

}  // namespace

class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{42};
  Matrix m(int r, int c) { return random_matrix(r, c, rng); }
};

TEST_F(OpGradients, Matmul) {
  check_gradient([](ag::Tape&, auto& v) { return ag::matmul(v[0], v[1]); }, {m(3, 4), m(4, 2)});
  check_gradient([](ag::Tape&, auto& v) { return ag::matmul_nt(v[0], v[1]); }, {m(3, 4), m(2, 4)});
}

TEST_F(OpGradients, Elementwise) {
  check_gradient([](ag::Tape&, auto& v) { return ag::add(v[0], v[1]); }, {m(2, 3), m(2, 3)});
  check_gradient([](ag::Tape&, auto& v) { return ag::sub(v[0], v[1]); }, {m(2, 3), m(2, 3)});
  check_gradient([](ag::Tape&, auto& v) { return ag::add_row(v[0], v[1]); }, {m(3, 2), m(1, 2)});
  check_gradient([](ag::Tape&, auto& v) { return ag::scale(v[0], -2.5); }, {m(2, 2)});
  check_gradient([](ag::Tape&, auto& v) { return ag::cwise_mul(v[0], v[1]); }, {m(2, 3), m(2, 3)});
  check_gradient([](ag::Tape&, auto& v) { return ag::sigmoid(v[0]); }, {m(3, 3)});
  check_gradient([](ag::Tape&, auto& v) { return ag::one_minus(v[0]); }, {m(2, 2)});
}

TEST_F(OpGradients, Affine) {
  check_gradient([](ag::Tape&, auto& v) { return ag::affine(v[0], v[1], v[2]); },
                 {m(3, 4), m(2, 4), m(1, 2)});
}

TEST_F(OpGradients, LogClamped) {
  Matrix p = (m(2, 3).array().abs() * 0.2 + 0.1).matrix();
  check_gradient([](ag::Tape&, auto& v) { return ag::log_clamped(v[0], 1e-7); }, {p});
}

TEST_F(OpGradients, LogClampedZeroGradientWhenClamped) {
  ag::Tape tape;
  ag::Var x = tape.variable(Matrix::Constant(1, 1, 1e-12));
  tape.backward(ag::log_clamped(x, 1e-7));
  EXPECT_EQ(tape.grad(x)(0, 0), 0.0);
}

TEST_F(OpGradients, SoftmaxRowsMasked) {
  const std::vector<bool> mask{true, false, true, true};
  check_gradient([&](ag::Tape&, auto& v) { return ag::softmax_rows(v[0], &mask); }, {m(3, 4)});
  check_gradient([](ag::Tape&, auto& v) { return ag::softmax_rows(v[0]); }, {m(2, 5)});
}

TEST_F(OpGradients, SoftmaxAllMaskedThrows) {
  ag::Tape tape;
  const std::vector<bool> mask{false, false};
  EXPECT_THROW(ag::softmax_rows(tape.constant(Matrix::Zero(1, 2)), &mask), std::invalid_argument);
}

TEST_F(OpGradients, ShapeOps) {
  check_gradient(
      [](ag::Tape&, auto& v) {
        const std::vector<ag::Var> parts{v[0], v[1], v[2]};
        return ag::hcat(parts);
      },
      {m(2, 1), m(2, 3), m(2, 2)});
  const std::vector<Segment> segs{{0, 2}, {1, 4}, {3, 4}};
  check_gradient([&](ag::Tape&, auto& v) { return ag::pool_segments(v[0], segs); }, {m(4, 3)});
  check_gradient([](ag::Tape&, auto& v) { return ag::colmax(v[0]); }, {m(4, 3)});
  check_gradient([](ag::Tape&, auto& v) { return ag::repeat_rows(v[0], 3); }, {m(1, 3)});
  check_gradient([](ag::Tape&, auto& v) { return ag::entry(v[0], 1, 2); }, {m(3, 3)});
}

TEST_F(OpGradients, SharedSubexpression) {
  // x appears on several paths; gradients must accumulate.
  check_gradient(
      [](ag::Tape&, auto& v) {
        ag::Var y = ag::matmul(v[0], v[0]);
        return ag::add(ag::cwise_mul(y, v[0]), ag::sigmoid(v[0]));
      },
      {m(3, 3)});
}

TEST(Tape, ConstantsGetNoGradient) {
  ag::Tape tape;
  ag::Var c = tape.constant(Matrix::Ones(2, 2));
  ag::Var x = tape.variable(Matrix::Ones(2, 2));
  ag::Var y = ag::matmul(c, x);
  EXPECT_FALSE(tape.requires_grad(c));
  EXPECT_TRUE(tape.requires_grad(y));
  tape.backward(ag::entry(y, 0, 0));
  EXPECT_TRUE(tape.grad(c).isZero(0));
  EXPECT_EQ(tape.grad(x)(0, 0), 1.0);
}

TEST(Tape, BackwardNeedsScalar) {
  ag::Tape tape;
  ag::Var x = tape.variable(Matrix::Ones(2, 2));
  EXPECT_THROW(tape.backward(x), std::logic_error);
}
