#include "fiat/ops.hpp"

#include <cmath>

namespace fiat {

namespace {

Tape& tape_of(const Var& v, const char* what) {
  require(v.valid(), ErrorKind::TapeMismatch, std::string(what) + ": invalid operand");
  return *v.tape;
}

Tape& same_tape(const Var& a, const Var& b, const char* what) {
  Tape& t = tape_of(a, what);
  require(b.tape == &t, ErrorKind::TapeMismatch,
          std::string(what) + ": operands live on different tapes");
  return t;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "matmul");
  const Mat& va = t.value(a);
  const Mat& vb = t.value(b);
  require(va.cols() == vb.rows(), ErrorKind::ShapeMismatch,
          "matmul: inner dimensions differ, " + shape_string(va) + " vs " + shape_string(vb));
  Mat y = va * vb;
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(y), rg, [a, b](Tape& tp, const Mat& g) {
    if (tp.requires_grad(a)) tp.accumulate_grad(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate_grad(b, tp.value(a).transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "matmul_nt");
  const Mat& va = t.value(a);
  const Mat& vb = t.value(b);
  require(va.cols() == vb.cols(), ErrorKind::ShapeMismatch,
          "matmul_nt: inner dimensions differ, " + shape_string(va) + " vs " + shape_string(vb));
  Mat y = va * vb.transpose();
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(y), rg, [a, b](Tape& tp, const Mat& g) {
    if (tp.requires_grad(a)) tp.accumulate_grad(a, g * tp.value(b));
    if (tp.requires_grad(b)) tp.accumulate_grad(b, g.transpose() * tp.value(a));
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "add");
  check_same_shape(t.value(a), t.value(b), "add");
  Mat y = t.value(a) + t.value(b);
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(y), rg, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate_grad(a, g);
    tp.accumulate_grad(b, g);
  });
}

Var add_n(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::ShapeMismatch, "add_n: empty operand list");
  Tape& t = tape_of(parts.front(), "add_n");
  Mat y = t.value(parts.front());
  bool rg = t.requires_grad(parts.front());
  for (size_t i = 1; i < parts.size(); ++i) {
    same_tape(parts.front(), parts[i], "add_n");
    check_same_shape(y, t.value(parts[i]), "add_n");
    y += t.value(parts[i]);
    rg = rg || t.requires_grad(parts[i]);
  }
  return t.record(std::move(y), rg, [parts](Tape& tp, const Mat& g) {
    for (const Var& p : parts) tp.accumulate_grad(p, g);
  });
}

Var add_rowvec(const Var& x, const Var& row) {
  Tape& t = same_tape(x, row, "add_rowvec");
  const Mat& vx = t.value(x);
  const Mat& vr = t.value(row);
  require(vr.rows() == 1 && vr.cols() == vx.cols(), ErrorKind::ShapeMismatch,
          "add_rowvec: expected 1x" + std::to_string(vx.cols()) + ", got " + shape_string(vr));
  Mat y = vx.rowwise() + vr.row(0);
  bool rg = t.requires_grad(x) || t.requires_grad(row);
  return t.record(std::move(y), rg, [x, row](Tape& tp, const Mat& g) {
    tp.accumulate_grad(x, g);
    if (tp.requires_grad(row)) tp.accumulate_grad(row, g.colwise().sum());
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "mul");
  check_same_shape(t.value(a), t.value(b), "mul");
  Mat y = t.value(a).cwiseProduct(t.value(b));
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(y), rg, [a, b](Tape& tp, const Mat& g) {
    if (tp.requires_grad(a)) tp.accumulate_grad(a, g.cwiseProduct(tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate_grad(b, g.cwiseProduct(tp.value(a)));
  });
}

Var mul_rowvec(const Var& x, const Var& row) {
  Tape& t = same_tape(x, row, "mul_rowvec");
  const Mat& vx = t.value(x);
  const Mat& vr = t.value(row);
  require(vr.rows() == 1 && vr.cols() == vx.cols(), ErrorKind::ShapeMismatch,
          "mul_rowvec: expected 1x" + std::to_string(vx.cols()) + ", got " + shape_string(vr));
  Mat y = (vx.array().rowwise() * vr.row(0).array()).matrix();
  bool rg = t.requires_grad(x) || t.requires_grad(row);
  return t.record(std::move(y), rg, [x, row](Tape& tp, const Mat& g) {
    if (tp.requires_grad(x)) {
      Mat gx = (g.array().rowwise() * tp.value(row).row(0).array()).matrix();
      tp.accumulate_grad(x, gx);
    }
    if (tp.requires_grad(row)) {
      Mat gr = g.cwiseProduct(tp.value(x)).colwise().sum();
      tp.accumulate_grad(row, gr);
    }
  });
}

Var scale(const Var& x, double c) {
  Tape& t = tape_of(x, "scale");
  Mat y = t.value(x) * c;
  return t.record(std::move(y), t.requires_grad(x), [x, c](Tape& tp, const Mat& g) {
    tp.accumulate_grad(x, (g * c).eval());
  });
}

Var layernorm(const Var& x, double eps) {
  Tape& t = tape_of(x, "layernorm");
  const Mat& vx = t.value(x);
  const auto n = vx.cols();
  require(n > 0, ErrorKind::ShapeMismatch, "layernorm: empty rows");
  Eigen::VectorXd mean = vx.rowwise().mean();
  Mat centered = vx.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().mean().matrix();
  Eigen::VectorXd inv_std = (var.array() + eps).rsqrt().matrix();
  Mat y = (centered.array().colwise() * inv_std.array()).matrix();
  Mat y_copy = y;
  return t.record(std::move(y), t.requires_grad(x),
                  [x, y_copy, inv_std](Tape& tp, const Mat& g) {
                    // dx = inv_std * (g - mean(g) - y * mean(g∘y)), per row
                    Eigen::VectorXd gm = g.rowwise().mean();
                    Eigen::VectorXd gym = g.cwiseProduct(y_copy).rowwise().mean();
                    Mat dx = g;
                    dx.colwise() -= gm;
                    dx -= (y_copy.array().colwise() * gym.array()).matrix();
                    dx = (dx.array().colwise() * inv_std.array()).matrix();
                    tp.accumulate_grad(x, dx);
                  });
}

Var causal_softmax(const Var& scores) {
  Tape& t = tape_of(scores, "causal_softmax");
  const Mat& s = t.value(scores);
  require(s.rows() == s.cols(), ErrorKind::ShapeMismatch,
          "causal_softmax: expected a square score matrix, got " + shape_string(s));
  const auto n = s.rows();
  Mat p = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto head = s.row(i).head(i + 1);
    double mx = head.maxCoeff();
    Eigen::RowVectorXd e = (head.array() - mx).exp().matrix();
    p.row(i).head(i + 1) = e / e.sum();
  }
  Mat p_copy = p;
  return t.record(std::move(p), t.requires_grad(scores),
                  [scores, p_copy](Tape& tp, const Mat& g) {
                    const auto n = p_copy.rows();
                    Mat ds = Mat::Zero(n, n);
                    for (Eigen::Index i = 0; i < n; ++i) {
                      auto pi = p_copy.row(i).head(i + 1);
                      auto gi = g.row(i).head(i + 1);
                      double dot = (gi.array() * pi.array()).sum();
                      ds.row(i).head(i + 1) = ((gi.array() - dot) * pi.array()).matrix();
                    }
                    tp.accumulate_grad(scores, ds);
                  });
}

Var gelu(const Var& x) {
  Tape& t = tape_of(x, "gelu");
  const Mat& vx = t.value(x);
  Mat inner = (kGeluC * (vx.array() + kGeluA * vx.array().cube())).matrix();
  Mat th = inner.array().tanh().matrix();
  Mat y = (0.5 * vx.array() * (1.0 + th.array())).matrix();
  return t.record(std::move(y), t.requires_grad(x), [x, th](Tape& tp, const Mat& g) {
    const Mat& vx = tp.value(x);
    // d/dx [0.5 x (1 + tanh(u))], u = c(x + a x^3)
    Mat sech2 = (1.0 - th.array().square()).matrix();
    Mat du = (kGeluC * (1.0 + 3.0 * kGeluA * vx.array().square())).matrix();
    Mat dydx =
        (0.5 * (1.0 + th.array()) + 0.5 * vx.array() * sech2.array() * du.array()).matrix();
    tp.accumulate_grad(x, g.cwiseProduct(dydx));
  });
}

Var gather_rows(const Var& table, std::vector<int> ids) {
  Tape& t = tape_of(table, "gather_rows");
  const Mat& vt = t.value(table);
  Mat y(static_cast<Eigen::Index>(ids.size()), vt.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < vt.rows(), ErrorKind::IndexOutOfRange,
            "gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                std::to_string(vt.rows()) + " rows");
    y.row(i) = vt.row(ids[i]);
  }
  return t.record(std::move(y), t.requires_grad(table),
                  [table, ids = std::move(ids)](Tape& tp, const Mat& g) {
                    Mat gt = Mat::Zero(tp.value(table).rows(), tp.value(table).cols());
                    for (size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += g.row(i);
                    tp.accumulate_grad(table, gt);
                  });
}

Var slice_cols(const Var& x, int begin, int end) {
  Tape& t = tape_of(x, "slice_cols");
  const Mat& vx = t.value(x);
  require(begin >= 0 && end > begin && end <= vx.cols(), ErrorKind::IndexOutOfRange,
          "slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
              ") outside " + shape_string(vx));
  Mat y = vx.middleCols(begin, end - begin);
  return t.record(std::move(y), t.requires_grad(x), [x, begin, end](Tape& tp, const Mat& g) {
    Mat gx = Mat::Zero(tp.value(x).rows(), tp.value(x).cols());
    gx.middleCols(begin, end - begin) = g;
    tp.accumulate_grad(x, gx);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::ShapeMismatch, "concat_cols: empty operand list");
  Tape& t = tape_of(parts.front(), "concat_cols");
  Eigen::Index rows = t.value(parts.front()).rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    same_tape(parts.front(), p, "concat_cols");
    require(t.value(p).rows() == rows, ErrorKind::ShapeMismatch,
            "concat_cols: row counts differ");
    cols += t.value(p).cols();
    rg = rg || t.requires_grad(p);
  }
  Mat y(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    y.middleCols(off, t.value(p).cols()) = t.value(p);
    off += t.value(p).cols();
  }
  return t.record(std::move(y), rg, [parts](Tape& tp, const Mat& g) {
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      Eigen::Index w = tp.value(p).cols();
      if (tp.requires_grad(p)) tp.accumulate_grad(p, g.middleCols(off, w));
      off += w;
    }
  });
}

Var cross_entropy(const Var& logits, std::vector<int> targets, std::vector<double> weights) {
  Tape& t = tape_of(logits, "cross_entropy");
  const Mat& z = t.value(logits);
  require(static_cast<Eigen::Index>(targets.size()) == z.rows(), ErrorKind::ShapeMismatch,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
              std::to_string(z.rows()) + " rows");
  require(weights.size() == targets.size(), ErrorKind::ShapeMismatch,
          "cross_entropy: weights/targets length mismatch");
  double wsum = 0.0;
  for (double w : weights) {
    require(w >= 0.0, ErrorKind::ShapeMismatch, "cross_entropy: negative weight");
    wsum += w;
  }
  require(wsum > 0.0, ErrorKind::ShapeMismatch, "cross_entropy: all weights are zero");

  Mat probs = softmax_rows(z);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    require(targets[i] >= 0 && targets[i] < z.cols(), ErrorKind::IndexOutOfRange,
            "cross_entropy: target " + std::to_string(targets[i]) + " outside vocab of " +
                std::to_string(z.cols()));
    if (weights[i] == 0.0) continue;
    loss -= weights[i] * std::log(probs(i, targets[i]));
  }
  Mat y(1, 1);
  y(0, 0) = loss / wsum;
  return t.record(std::move(y), t.requires_grad(logits),
                  [logits, probs, targets = std::move(targets), weights = std::move(weights),
                   wsum](Tape& tp, const Mat& g) {
                    Mat dz = Mat::Zero(probs.rows(), probs.cols());
                    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                      if (weights[i] == 0.0) continue;
                      double c = g(0, 0) * weights[i] / wsum;
                      dz.row(i) = c * probs.row(i);
                      dz(i, targets[i]) -= c;
                    }
                    tp.accumulate_grad(logits, dz);
                  });
}

Var softmax_cross_entropy(const Var& logits, int target) {
  Tape& t = tape_of(logits, "softmax_cross_entropy");
  require(t.value(logits).rows() == 1, ErrorKind::ShapeMismatch,
          "softmax_cross_entropy: expected a single 1xV row of logits");
  return cross_entropy(logits, {target}, {1.0});
}

Mat softmax_rows(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mx = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - mx).exp().matrix();
    y.row(i) = e / e.sum();
  }
  return y;
}

Mat log_softmax_rows(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mx = x.row(i).maxCoeff();
    double lse = std::log((x.row(i).array() - mx).exp().sum()) + mx;
    y.row(i) = (x.row(i).array() - lse).matrix();
  }
  return y;
}

}  // namespace fiat
