#pragma once

#include <cstdint>
#include <vector>

#include "fiat/tensor.hpp"

namespace fiat {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter slot, in the
/// order the state was constructed with; the step counter advances by exactly
/// one per step() call.
class AdamState {
 public:
  AdamState(const std::vector<const Mat*>& params, AdamConfig config = {});

  /// Applies one update in place. params/grads must match the construction
  /// shapes slot for slot.
  void step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads);

  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  int64_t t_ = 0;
};

}  // namespace fiat
