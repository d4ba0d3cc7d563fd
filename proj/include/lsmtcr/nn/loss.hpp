#pragma once

#include <span>
#include <vector>

#include "lsmtcr/nn/tensor.hpp"

namespace lsmtcr::nn {

/// Teacher-forcing view of a BOS..EOS sequence: inputs are ids[0..S-2],
/// targets ids[1..S-1]; a target is valid when it is not pad and no EOS
/// precedes it.
struct ShiftedSequence {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<bool> valid;
};

ShiftedSequence shift_for_teacher_forcing(std::span<const int> ids);

struct TokenPredictions {
  Tensor logits;  // [S, V]
  std::vector<int> targets;
  std::vector<bool> valid;
};

/// -(1/Z) Σ valid log softmax(logits)[target], Z = valid targets over the
/// whole batch. Throws std::invalid_argument when Z = 0.
Tensor masked_token_loss(std::span<const TokenPredictions> batch);

}  // namespace lsmtcr::nn
