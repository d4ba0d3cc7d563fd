#include "lsmtcr/seqdata/sampling.hpp"

#include <algorithm>
#include <set>

namespace lsmtcr::seqdata {

std::vector<EpitopeCdr3> make_negatives(const std::vector<EpitopeCdr3>& pairs, std::uint64_t seed) {
  std::set<std::string> distinct;
  for (const auto& p : pairs) distinct.insert(p.second);
  if (distinct.size() < 2) {
    throw std::invalid_argument("negative construction needs at least two distinct CDR3 values");
  }
  const std::set<EpitopeCdr3> positives(pairs.begin(), pairs.end());

  constexpr std::uint64_t kMaxAttempts = 1000;
  for (std::uint64_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed({seed, attempt}));
    rng.shuffle(order);
    auto positive_at = [&](std::size_t i) { return positives.count({pairs[i].first, pairs[order[i]].second}) > 0; };
    // Repair collisions by swapping with a random partner when the swap
    // leaves both slots negative; a plain reshuffle rarely succeeds once
    // epitopes repeat.
    bool clean = true;
    for (std::size_t i = 0; i < order.size() && clean; ++i) {
      if (!positive_at(i)) continue;
      clean = false;
      for (std::size_t tries = 0; tries < 4 * order.size() && !clean; ++tries) {
        const std::size_t j = rng.below(order.size());
        std::swap(order[i], order[j]);
        if (!positive_at(i) && !positive_at(j)) {
          clean = true;
        } else {
          std::swap(order[i], order[j]);
        }
      }
    }
    if (!clean) continue;
    std::vector<EpitopeCdr3> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) out.push_back({pairs[i].first, pairs[order[i]].second});
    return out;
  }
  throw std::invalid_argument("no CDR3 permutation avoids every positive pair after 1000 attempts");
}

std::size_t candidate_count(std::size_t length) {
  const auto m = static_cast<std::size_t>(std::round(kReferenceMaskRatio * static_cast<double>(length)));
  return std::max<std::size_t>(1, m);
}

MaskCandidates preselect_mask_candidates(const TokenSequence& tokens, std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (tokens.ids[i] != Vocabulary::pad_id) eligible.push_back(i);
  }
  if (eligible.empty()) throw std::invalid_argument("cannot preselect mask positions of an empty sequence");
  const std::size_t m = std::min(candidate_count(eligible.size()), eligible.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < m; ++i) {
    std::swap(eligible[i], eligible[i + rng.below(eligible.size() - i)]);
  }
  MaskCandidates out{{eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(m)}};
  std::sort(out.positions.begin(), out.positions.end());
  return out;
}

}  // namespace lsmtcr::seqdata
