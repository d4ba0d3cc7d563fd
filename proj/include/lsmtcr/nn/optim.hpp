#pragma once

#include <cstddef>
#include <vector>

#include "lsmtcr/nn/params.hpp"

namespace lsmtcr::nn {

struct AdamWConfig {
  double lr_peak = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.1;
};

/// Linear warmup from 0 to lr_peak over the first warmup_fraction of
/// total_steps, then linear decay to 0 at total_steps; 0 beyond.
double lr_at(std::size_t step, const AdamWConfig& config);

/// AdamW with decoupled weight decay on parameters flagged `decay`. Frozen
/// parameters keep their gradients but are never updated.
class AdamW {
 public:
  AdamW(ParamSet& params, AdamWConfig config);

  /// Applies one update with the rate of the next step index (1-based) and
  /// returns that rate.
  double step();
  std::size_t steps_taken() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  ParamSet* params_;
  AdamWConfig config_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace lsmtcr::nn
