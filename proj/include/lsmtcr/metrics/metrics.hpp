#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lsmtcr::metrics {

using Repertoire = std::vector<std::string>;
using KmerSet = std::set<std::string>;

struct KmerSpectrum {
  std::size_t k = 0;
  std::map<std::string, double> freq;  // sums to 1
};

/// Marks a relative metric whose reference value is 0.
inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

/// All k-mers of sequences of length >= k. Throws std::invalid_argument when
/// k = 0 or no sequence is long enough.
KmerSet kmer_set(const Repertoire& seqs, std::size_t k);
KmerSpectrum kmer_spectrum(const Repertoire& seqs, std::size_t k);

/// |A ∩ B| / |A ∪ B|; both empty is rejected.
double jaccard(const KmerSet& a, const KmerSet& b);

double diversity_ratio(const Repertoire& rep);
/// Share of the unique sequences of rep absent from reference.
double novel_ratio(const Repertoire& rep, const Repertoire& reference);

/// Over sequence-identity frequencies: -Σ p ln p and 1 - Σ p².
double shannon(const Repertoire& rep);
double simpson(const Repertoire& rep);

/// Seeded draw of min(n, |reference|) sequences without replacement.
Repertoire subsample(const Repertoire& reference, std::size_t n, std::uint64_t seed);

/// metric(rep) / metric(reference subsampled to |rep|); kUndefined when the
/// denominator is 0.
double shannon_rel(const Repertoire& rep, const Repertoire& reference, std::uint64_t seed);
double simpson_rel(const Repertoire& rep, const Repertoire& reference, std::uint64_t seed);

/// Entropy of pooled residue frequencies / ln 20.
double aa_div(const Repertoire& rep);

/// exp(-|mean_gen - mean_ref| / sd_ref) over sequence lengths (population sd).
double length_realism(const Repertoire& rep, const Repertoire& reference);

struct DiversityReport {
  std::string condition;
  double jaccard2 = 0.0;
  double diversity_ratio = 0.0;
  double novel_ratio = 0.0;
  double shannon_rel = 0.0;
  double simpson_rel = 0.0;
  double aa_div = 0.0;
  double length_realism = 0.0;
  double composite = kUndefined;  // set by composite_score

  std::array<double, 7> values() const;
};

inline constexpr std::string_view kDiversityHeader =
    "condition,jaccard2,diversity_ratio,novel_ratio,shannon_rel,simpson_rel,aa_div,length_realism,composite";

DiversityReport diversity_report(const std::string& condition, const Repertoire& generated,
                                 const Repertoire& reference, std::uint64_t seed);

/// Min-max normalizes each metric across conditions (a constant metric maps
/// to 0.5) and averages the seven; undefined entries are left out of both the
/// range and the mean. Fills `composite` and returns the scores. Needs at
/// least two conditions.
std::vector<double> composite_score(std::vector<DiversityReport>& reports);

std::string format_diversity_row(const DiversityReport& report);

std::size_t levenshtein(std::string_view a, std::string_view b);
double norm_levenshtein(std::string_view a, std::string_view b);
/// (mismatches over the common prefix length + length gap) / max length.
double norm_hamming(std::string_view a, std::string_view b);

using AlignedPairs = std::vector<std::pair<std::string, std::string>>;  // (generated, reference)

double exact_match_rate(const AlignedPairs& pairs);

/// Natural-log Jensen–Shannon divergence over the union support.
double js_divergence(const KmerSpectrum& a, const KmerSpectrum& b);

struct SimilarityReport {
  double exact_match_rate = 0.0;
  double mean_norm_hamming = 0.0;
  double mean_norm_levenshtein = 0.0;
  double jaccard3 = 0.0;  // 3-mer sets of the generated vs reference sides
};

SimilarityReport similarity_report(const AlignedPairs& pairs);

}  // namespace lsmtcr::metrics
