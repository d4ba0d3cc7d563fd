#include "lsmtcr/bert/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "lsmtcr/util/random.hpp"

namespace lsmtcr::bert {

void DiffusionSchedule::validate() const {
  if (steps < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(p_min > 0.0 && p_min <= p_max && p_max <= 1.0)) {
    throw std::invalid_argument("schedule needs 0 < P_min <= P_max <= 1");
  }
  if (!(p_ref > 0.0)) throw std::invalid_argument("reference ratio must be positive");
}

double mask_proportion(int t, const DiffusionSchedule& schedule) {
  if (t < 0 || t > schedule.steps) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside 0.." + std::to_string(schedule.steps));
  }
  if (t == schedule.steps) return schedule.p_max;
  return schedule.p_min + (schedule.p_max - schedule.p_min) * static_cast<double>(t) / schedule.steps;
}

std::size_t active_mask_count(std::size_t candidates, int t, const DiffusionSchedule& schedule) {
  if (candidates == 0) throw std::invalid_argument("active_mask_count needs at least one candidate");
  const double raw = std::round(static_cast<double>(candidates) * mask_proportion(t, schedule) / schedule.p_ref);
  return std::clamp(static_cast<std::size_t>(std::max(raw, 0.0)), std::size_t{1}, candidates);
}

MaskedSequence corrupt(const seqdata::TokenSequence& tokens, const seqdata::MaskCandidates& candidates, int t,
                       const DiffusionSchedule& schedule, std::uint64_t seed) {
  MaskedSequence out;
  out.original = tokens.ids;
  out.corrupted = tokens.ids;
  out.t = t;
  std::vector<std::size_t> order = candidates.positions;
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t m = active_mask_count(order.size(), t, schedule);
  out.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(out.masked.begin(), out.masked.end());
  for (std::size_t pos : out.masked) {
    if (pos >= out.corrupted.size()) throw std::out_of_range("mask candidate beyond sequence end");
    out.corrupted[pos] = seqdata::Vocabulary::mask_id;
  }
  return out;
}

}  // namespace lsmtcr::bert
