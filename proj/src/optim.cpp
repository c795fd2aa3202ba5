#include "latentscale/optim.hpp"

#include <algorithm>
#include <cmath>

namespace latentscale::num {

Adam::Adam(ParameterSet& params, AdamConfig config) : params_(&params), config_(config) { reset(); }

void Adam::reset() {
  step_ = 0;
  first_.clear();
  second_.clear();
  for (std::size_t i = 0; i < params_->size(); ++i) {
    first_.emplace_back((*params_)[i].value.shape(), 0.0);
    second_.emplace_back((*params_)[i].value.shape(), 0.0);
  }
}

double Adam::current_lr() const {
  if (step_ < config_.warmup_steps) {
    return config_.peak_lr * static_cast<double>(step_) / static_cast<double>(config_.warmup_steps);
  }
  if (config_.decay_steps == 0) return config_.peak_lr;
  const double t = std::min(1.0, static_cast<double>(step_ - config_.warmup_steps) / static_cast<double>(config_.decay_steps));
  const double f = config_.final_lr_fraction;
  return config_.peak_lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(M_PI * t)));
}

double Adam::step() {
  double sq = 0.0;
  for (std::size_t i = 0; i < params_->size(); ++i) {
    const Parameter& p = (*params_)[i];
    if (!p.trainable) continue;
    for (double g : p.grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("Adam: non-finite gradient norm");
  const double clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;

  ++step_;
  const double lr = current_lr();
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    Parameter& p = (*params_)[i];
    if (!p.trainable) continue;
    Tensor& m = first_[i];
    Tensor& v = second_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k] * clip;
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
    p.grad.fill(0.0);
  }
  return norm;
}

}  // namespace latentscale::num
