#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lsmtcr/seqdata/sampling.hpp"
#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::bert {

/// Linear corruption schedule over timesteps t = 0..steps.
struct DiffusionSchedule {
  int steps = 20;
  double p_min = 0.05;
  double p_max = 0.45;
  double p_ref = seqdata::kReferenceMaskRatio;

  /// Throws std::invalid_argument unless 0 < p_min <= p_max <= 1, steps >= 1
  /// and p_ref > 0.
  void validate() const;
};

/// p(t) = p_min + (p_max - p_min) t / T.
double mask_proportion(int t, const DiffusionSchedule& schedule);

/// m(t) = clamp(round(M p(t) / p_ref), 1, M).
std::size_t active_mask_count(std::size_t candidates, int t, const DiffusionSchedule& schedule);

/// One corrupted training example. `masked` is ascending and holds the
/// positions replaced by MASK in `corrupted`.
struct MaskedSequence {
  std::vector<int> corrupted;
  std::vector<int> original;
  std::vector<std::size_t> masked;
  int t = 0;
};

/// Masks the first m(t) candidates of a seed-determined ordering, so that for
/// a fixed seed the masked sets are nested across t.
MaskedSequence corrupt(const seqdata::TokenSequence& tokens, const seqdata::MaskCandidates& candidates, int t,
                       const DiffusionSchedule& schedule, std::uint64_t seed);

}  // namespace lsmtcr::bert
