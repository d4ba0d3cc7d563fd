#include "lsmtcr/nn/loss.hpp"

#include <stdexcept>

#include "lsmtcr/nn/ops.hpp"
#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::nn {

ShiftedSequence shift_for_teacher_forcing(std::span<const int> ids) {
  if (ids.size() < 2) throw std::invalid_argument("teacher forcing needs at least two tokens");
  ShiftedSequence out;
  out.inputs.assign(ids.begin(), ids.end() - 1);
  out.targets.assign(ids.begin() + 1, ids.end());
  out.valid.resize(out.targets.size());
  bool ended = false;
  for (std::size_t s = 0; s < out.targets.size(); ++s) {
    out.valid[s] = !ended && out.targets[s] != seqdata::Vocabulary::pad_id;
    if (out.targets[s] == seqdata::Vocabulary::eos_id) ended = true;
  }
  return out;
}

Tensor masked_token_loss(std::span<const TokenPredictions> batch) {
  Tensor total;
  std::size_t z = 0;
  for (const auto& item : batch) {
    if (item.logits.rank() != 2 || item.logits.dim(0) != item.targets.size() || item.valid.size() != item.targets.size()) {
      throw std::invalid_argument("token loss needs one target and one flag per logits row");
    }
    Flags include(item.valid.size());
    std::size_t count = 0;
    for (std::size_t i = 0; i < item.valid.size(); ++i) {
      include[i] = item.valid[i];
      count += item.valid[i] ? 1 : 0;
    }
    if (count == 0) continue;
    Tensor s = cross_entropy_sum(item.logits, item.targets, include);
    total = total.defined() ? add(total, s) : s;
    z += count;
  }
  if (z == 0) throw std::invalid_argument("token loss: no valid target positions");
  return scale(total, 1.0 / static_cast<double>(z));
}

}  // namespace lsmtcr::nn
