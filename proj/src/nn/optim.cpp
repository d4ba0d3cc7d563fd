#include "lsmtcr/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace lsmtcr::nn {

double lr_at(std::size_t step, const AdamWConfig& config) {
  const auto total = static_cast<double>(config.total_steps);
  const auto s = static_cast<double>(step);
  if (config.total_steps == 0 || s > total) return 0.0;
  const double warmup = config.warmup_fraction * total;
  if (s <= warmup) return warmup > 0.0 ? config.lr_peak * s / warmup : config.lr_peak;
  return config.lr_peak * (total - s) / (total - warmup);
}

AdamW::AdamW(ParamSet& params, AdamWConfig config) : params_(&params), config_(config) {
  if (config_.total_steps == 0) throw std::invalid_argument("optimizer needs total_steps >= 1");
  for (const auto& p : params_->items()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

double AdamW::step() {
  ++step_;
  const double lr = lr_at(step_, config_);
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  auto& items = params_->items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    auto values = p.tensor.mutable_values();
    const auto grad = p.tensor.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = p.decay ? config_.weight_decay : 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * grad[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * grad[j] * grad[j];
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
      values[j] -= lr * (update + decay * values[j]);
    }
  }
  return lr;
}

}  // namespace lsmtcr::nn
