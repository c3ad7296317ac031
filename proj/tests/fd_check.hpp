#pragma once

// Central finite-difference gradient oracle. Re-evaluates the loss through the
// caller-supplied closure with perturbed parameters, so it is independent of
// the tape's backward pass.

#include <functional>
#include <vector>

#include "fiat/rng.hpp"
#include "fiat/tensor.hpp"

namespace fiat::testing {

// Loss as a plain number given the current parameter values.
using LossFn = std::function<double(const std::vector<Mat>&)>;
// Analytic gradients for the same parameters (one Mat per parameter).
using GradFn = std::function<std::vector<Mat>(const std::vector<Mat>&)>;

struct FdReport {
  double max_rel_error = 0.0;
  int probes = 0;
};

inline FdReport fd_check(std::vector<Mat> params, const LossFn& loss, const GradFn& grads,
                         Rng& rng, int probes_per_tensor = 4, double h = 1e-5) {
  FdReport report;
  std::vector<Mat> analytic = grads(params);
  for (size_t p = 0; p < params.size(); ++p) {
    for (int probe = 0; probe < probes_per_tensor; ++probe) {
      Eigen::Index r = static_cast<Eigen::Index>(rng.below(params[p].rows()));
      Eigen::Index c = static_cast<Eigen::Index>(rng.below(params[p].cols()));
      double saved = params[p](r, c);
      params[p](r, c) = saved + h;
      double up = loss(params);
      params[p](r, c) = saved - h;
      double down = loss(params);
      params[p](r, c) = saved;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[p](r, c);
      double denom = std::max({std::abs(a), std::abs(numeric), 1e-5});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.probes;
    }
  }
  return report;
}

inline Mat random_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.gaussian(0.0, stddev);
  return m;
}

}  // namespace fiat::testing
