#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>

#include "lsmtcr/nn/optim.hpp"

namespace lsmtcr::nn {

/// Knobs shared by every training loop.
struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double lr_peak = 1e-3;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct StepLog {
  std::size_t step = 0;  // 1-based, global across epochs
  double loss = 0.0;
  double lr = 0.0;
};

using StepCallback = std::function<void(const StepLog&)>;

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  return (n + batch_size - 1) / batch_size;
}

inline AdamWConfig optimizer_config(const TrainOptions& o, std::size_t total_steps) {
  AdamWConfig c;
  c.lr_peak = o.lr_peak;
  c.weight_decay = o.weight_decay;
  c.warmup_fraction = o.warmup_fraction;
  c.total_steps = total_steps == 0 ? 1 : total_steps;
  return c;
}

}  // namespace lsmtcr::nn
