#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lsmtcr/seqdata/vocab.hpp"
#include "lsmtcr/util/random.hpp"

namespace lsmtcr::seqdata {

/// Reference masking ratio used when preselecting candidates.
inline constexpr double kReferenceMaskRatio = 0.15;

/// Deterministic shuffle-and-cut. |train| = round(ratio * N), rounding half
/// away from zero.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split(const std::vector<T>& records, double ratio,
                                                std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0, 1)");
  if (records.size() < 2) throw std::invalid_argument("split needs at least two records");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::round(ratio * static_cast<double>(records.size())));
  std::pair<std::vector<T>, std::vector<T>> out;
  out.first.reserve(n_train);
  out.second.reserve(records.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(records[order[i]]);
  }
  return out;
}

using EpitopeCdr3 = std::pair<std::string, std::string>;

/// Permutes the CDR3 column until no output pair is one of the positive pairs.
/// Attempt k shuffles with seed mix(seed, k), then swaps each remaining
/// positive slot with a random partner that leaves both negative; gives up
/// after 1000 attempts.
std::vector<EpitopeCdr3> make_negatives(const std::vector<EpitopeCdr3>& pairs, std::uint64_t seed);

struct MaskCandidates {
  std::vector<std::size_t> positions;  // ascending
  std::size_t count() const { return positions.size(); }
};

/// M = max(1, round(0.15 * length)).
std::size_t candidate_count(std::size_t length);

/// Samples M distinct non-pad positions uniformly without replacement.
MaskCandidates preselect_mask_candidates(const TokenSequence& tokens, std::uint64_t seed);

}  // namespace lsmtcr::seqdata
