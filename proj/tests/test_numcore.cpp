#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "fiat/adam.hpp"
#include "fiat/ops.hpp"

using namespace fiat;
using fiat::testing::fd_check;
using fiat::testing::random_mat;

namespace {

Mat mat2(std::initializer_list<std::initializer_list<double>> rows) {
  Mat m(static_cast<Eigen::Index>(rows.size()),
        static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

// Naive triple-loop product; the independent oracle for matmul.
Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat y = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) y(i, j) += a(i, k) * b(k, j);
  return y;
}

}  // namespace

TEST_CASE("matmul basic cases") {
  Tape t;
  Var identity = t.constant(Mat::Identity(2, 2));
  Var column = t.constant(mat2({{5}, {6}}));
  CHECK(t.value(matmul(identity, column)) == mat2({{5}, {6}}));

  Var a = t.constant(mat2({{1, 2}, {3, 4}}));
  Mat expected = naive_matmul(mat2({{1, 2}, {3, 4}}), mat2({{5}, {6}}));
  CHECK(expected == mat2({{17}, {39}}));
  CHECK(t.value(matmul(a, column)) == expected);

  Var bad = t.constant(mat2({{1, 2}}));
  CHECK_THROWS_AS(matmul(bad, bad), Error);
  try {
    matmul(bad, bad);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("matmul against triple-loop oracle on random inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Mat a = random_mat(rng, 3 + trial % 3, 4);
    Mat b = random_mat(rng, 4, 2 + trial % 4);
    Tape t;
    Mat got = t.value(matmul(t.constant(a), t.constant(b)));
    CHECK((got - naive_matmul(a, b)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("softmax_cross_entropy analytic values") {
  Tape t;
  Var uniform = t.constant(Mat::Zero(1, 4));
  CHECK(t.value(softmax_cross_entropy(uniform, 2))(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Mat two(1, 2);
  two << 0.0, std::log(2.0);
  Var z = t.constant(two);
  CHECK(t.value(softmax_cross_entropy(z, 1))(0, 0) ==
        doctest::Approx(-std::log(2.0 / 3.0)).epsilon(1e-12));

  // shift invariance
  Mat shifted = two.array() + 123.456;
  Var zs = t.constant(shifted);
  CHECK(t.value(softmax_cross_entropy(zs, 1))(0, 0) ==
        doctest::Approx(t.value(softmax_cross_entropy(z, 1))(0, 0)).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_cross_entropy(z, 2), Error);
  CHECK_THROWS_AS(softmax_cross_entropy(z, -1), Error);
}

TEST_CASE("softmax rows are distributions and cross-entropy is non-negative") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Mat z = random_mat(rng, 5, 7, 4.0);
    Mat p = softmax_rows(z);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);
      CHECK(p.row(i).minCoeff() > 0.0);
    }
    Tape t;
    double loss = t.value(softmax_cross_entropy(t.constant(z.row(0)), 3))(0, 0);
    CHECK(loss >= 0.0);
  }
  // loss approaches zero only as the target probability approaches one
  Mat peaked = Mat::Zero(1, 4);
  peaked(0, 1) = 50.0;
  Tape t;
  CHECK(t.value(softmax_cross_entropy(t.constant(peaked), 1))(0, 0) < 1e-12);
  CHECK(t.value(softmax_cross_entropy(t.constant(Mat::Zero(1, 4)), 1))(0, 0) > 0.1);
}

TEST_CASE("backward of x^2 at x=3 is 6") {
  Tape t;
  Var x = t.leaf(mat2({{3.0}}), true);
  Var y = mul(x, x);
  t.backward(y);
  CHECK(t.grad(x)(0, 0) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("frozen leaves receive no gradient") {
  Tape t;
  Var x = t.leaf(mat2({{3.0}}), true);
  Var frozen = t.leaf(mat2({{2.0}}), false);
  Var y = mul(mul(x, x), frozen);
  t.backward(y);
  CHECK(t.has_grad(x));
  CHECK_FALSE(t.has_grad(frozen));
}

TEST_CASE("TapeMismatch on cross-tape ops and foreign loss") {
  Tape t1;
  Tape t2;
  Var a = t1.constant(Mat::Ones(1, 1));
  Var b = t2.constant(Mat::Ones(1, 1));
  CHECK_THROWS_AS(add(a, b), Error);
  Var loss = mul(t2.leaf(Mat::Ones(1, 1), true), b);
  CHECK_THROWS_AS(t1.backward(loss), Error);
}

TEST_CASE("backward distributes over sums") {
  Rng rng(7);
  Mat xv = random_mat(rng, 3, 4);
  std::vector<int> targets = {1, 3, 0};
  std::vector<double> w = {1.0, 1.0, 1.0};

  Tape joint;
  Var x = joint.leaf(xv, true);
  Var l1 = cross_entropy(x, targets, w);
  Var sum_loss = add(l1, cross_entropy(scale(x, 2.0), targets, w));
  joint.backward(sum_loss);
  Mat joint_grad = joint.grad(x);

  Tape ta;
  Var xa = ta.leaf(xv, true);
  ta.backward(cross_entropy(xa, targets, w));
  Tape tb;
  Var xb = tb.leaf(xv, true);
  tb.backward(cross_entropy(scale(xb, 2.0), targets, w));

  Mat separate = ta.grad(xa) + tb.grad(xb);
  CHECK((joint_grad - separate).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("finite differences validate every primitive") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const Eigen::Index n = 4;

    // A composite touching every primitive once; loss must be scalar.
    auto build = [&](Tape& t, const std::vector<Mat>& p) {
      Var a = t.leaf(p[0], true);           // 4x4
      Var b = t.leaf(p[1], true);           // 4x4
      Var row = t.leaf(p[2], true);         // 1x4
      Var table = t.leaf(p[3], true);       // 6x4
      Var h = matmul(a, b);
      h = add(h, matmul_nt(a, b));
      h = mul(h, a);
      h = add_rowvec(h, row);
      h = mul_rowvec(h, row);
      h = layernorm(h);
      h = gelu(h);
      Var g = gather_rows(table, {0, 2, 5, 2});
      h = add(h, g);
      Var left = slice_cols(h, 0, 2);
      Var right = slice_cols(h, 2, 4);
      h = concat_cols({right, left});
      Var probs = causal_softmax(scale(matmul_nt(h, h), 0.37));
      h = matmul(probs, h);
      h = add_n({h, g, h});
      return cross_entropy(h, {1, 0, 3, 2}, {1.0, 0.0, 2.0, 0.5});
    };

    std::vector<Mat> params = {random_mat(rng, n, n, 0.5), random_mat(rng, n, n, 0.5),
                               random_mat(rng, 1, n, 0.5), random_mat(rng, 6, n, 0.5)};
    auto loss_fn = [&](const std::vector<Mat>& p) {
      Tape t;
      return t.value(build(t, p))(0, 0);
    };
    auto grad_fn = [&](const std::vector<Mat>& p) {
      Tape t;
      Var loss = build(t, p);
      t.backward(loss);
      std::vector<Mat> grads;
      Var a{&t, 0}, b{&t, 1}, row{&t, 2}, table{&t, 3};
      for (Var v : {a, b, row, table}) grads.push_back(t.grad(v));
      return grads;
    };
    auto report = fd_check(params, loss_fn, grad_fn, rng, 6);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  Mat p = mat2({{1.0, -2.0}, {3.0, 4.0}});
  Mat g = Mat::Zero(2, 2);
  AdamState state({&p});
  Mat before = p;
  state.step({&p}, {&g});
  CHECK(p == before);
  CHECK(state.steps_taken() == 1);
}

TEST_CASE("adam first step is approximately -lr for positive scalar gradient") {
  // bias-corrected first step: m_hat = g, v_hat = g^2, delta = -lr*g/(|g|+eps)
  Mat p = mat2({{0.5}});
  Mat g = mat2({{0.73}});
  AdamConfig cfg;
  AdamState state({&p}, cfg);
  state.step({&p}, {&g});
  CHECK(p(0, 0) == doctest::Approx(0.5 - cfg.lr).epsilon(1e-6));
}

TEST_CASE("adam is deterministic and shape-checked") {
  Rng rng(5);
  Mat p1 = random_mat(rng, 3, 3);
  Mat p2 = p1;
  Mat g = random_mat(rng, 3, 3);
  AdamState s1({&p1});
  AdamState s2({&p2});
  for (int i = 0; i < 17; ++i) {
    s1.step({&p1}, {&g});
    s2.step({&p2}, {&g});
  }
  CHECK(p1 == p2);  // bit-identical

  Mat wrong = Mat::Zero(2, 2);
  AdamState s3({&p1});
  CHECK_THROWS_AS(s3.step({&p1}, {&wrong}), Error);
}

TEST_CASE("gather_rows rejects out-of-range ids") {
  Tape t;
  Var table = t.constant(Mat::Ones(3, 2));
  CHECK_THROWS_AS(gather_rows(table, {0, 3}), Error);
}
