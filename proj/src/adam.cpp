#include "fiat/adam.hpp"

#include <cmath>

namespace fiat {

AdamState::AdamState(const std::vector<const Mat*>& params, AdamConfig config)
    : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Mat* p : params) {
    m_.push_back(Mat::Zero(p->rows(), p->cols()));
    v_.push_back(Mat::Zero(p->rows(), p->cols()));
  }
}

void AdamState::step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads) {
  require(params.size() == m_.size() && grads.size() == m_.size(), ErrorKind::ShapeMismatch,
          "adam_step: parameter count does not match optimizer state");
  ++t_;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params[i];
    const Mat& g = *grads[i];
    check_same_shape(p, m_[i], "adam_step: param");
    check_same_shape(g, m_[i], "adam_step: grad");
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    Mat m_hat = m_[i] / bc1;
    Mat v_hat = v_[i] / bc2;
    p.array() -= config_.lr * m_hat.array() / (v_hat.array().sqrt() + config_.epsilon);
  }
}

}  // namespace fiat
