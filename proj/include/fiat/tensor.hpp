#pragma once

#include <Eigen/Dense>
#include <string>

#include "fiat/errors.hpp"

namespace fiat {

/// The project's dense tensor type: row-major doubles, 2-D (vectors are 1×n).
/// Row-major matches the on-disk layout of checkpoints and adapters.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline bool same_shape(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

inline std::string shape_string(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void check_same_shape(const Mat& a, const Mat& b, const char* what) {
  require(same_shape(a, b), ErrorKind::ShapeMismatch,
          std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void check_finite(const Mat& m, const char* what) {
  require(all_finite(m), ErrorKind::NonFinite,
          std::string(what) + " contains NaN or Inf");
}

inline bool is_scalar(const Mat& m) { return m.rows() == 1 && m.cols() == 1; }

}  // namespace fiat
