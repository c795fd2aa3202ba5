#pragma once

#include <cstddef>
#include <vector>

#include "latentscale/autodiff.hpp"

namespace latentscale::num {

struct AdamConfig {
  double peak_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 500;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double grad_clip = 1.0;
  /// Cosine decay horizon after warmup; 0 keeps the peak rate.
  std::size_t decay_steps = 0;
  double final_lr_fraction = 0.1;
};

/// Adam with linear warmup to peak_lr, then optionally a cosine decay to
/// final_lr_fraction * peak_lr over decay_steps (held there afterwards).
/// Moments are kept for every parameter in the set; frozen parameters are
/// skipped.
class Adam {
 public:
  Adam(ParameterSet& params, AdamConfig config);

  /// Applies one update from the accumulated gradients, then zeroes them.
  /// Returns the pre-clip global gradient norm.
  double step();
  double current_lr() const;
  std::size_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void reset();
  void set_decay_steps(std::size_t n) { config_.decay_steps = n; }

 private:
  ParameterSet* params_;
  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

}  // namespace latentscale::num
