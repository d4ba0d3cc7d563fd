#include "lsmtcr/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "lsmtcr/nn/checkpoint.hpp"
#include "lsmtcr/seqdata/vocab.hpp"
#include "lsmtcr/util/random.hpp"

namespace lsmtcr::metrics {

namespace {

void require_non_empty(const Repertoire& rep, const char* what) {
  if (rep.empty()) throw std::invalid_argument(std::string(what) + ": repertoire is empty");
}

std::vector<double> frequencies(const Repertoire& rep) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : rep) ++counts[s];
  std::vector<double> p;
  p.reserve(counts.size());
  for (const auto& [seq, c] : counts) p.push_back(static_cast<double>(c) / static_cast<double>(rep.size()));
  return p;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double q : p) {
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

double relative(double gen, double ref) { return ref == 0.0 ? kUndefined : gen / ref; }

}  // namespace

KmerSet kmer_set(const Repertoire& seqs, std::size_t k) {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  KmerSet out;
  bool any = false;
  for (const auto& s : seqs) {
    if (s.size() < k) continue;
    any = true;
    for (std::size_t i = 0; i + k <= s.size(); ++i) out.insert(s.substr(i, k));
  }
  if (!any) throw std::invalid_argument("no sequence has length >= " + std::to_string(k));
  return out;
}

KmerSpectrum kmer_spectrum(const Repertoire& seqs, std::size_t k) {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i + k <= s.size(); ++i) {
      ++counts[s.substr(i, k)];
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("no sequence has length >= " + std::to_string(k));
  KmerSpectrum out;
  out.k = k;
  for (const auto& [kmer, c] : counts) out.freq[kmer] = static_cast<double>(c) / static_cast<double>(total);
  return out;
}

double jaccard(const KmerSet& a, const KmerSet& b) {
  if (a.empty() && b.empty()) throw std::invalid_argument("jaccard of two empty sets is undefined");
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

double diversity_ratio(const Repertoire& rep) {
  require_non_empty(rep, "diversity_ratio");
  const std::set<std::string> unique(rep.begin(), rep.end());
  return static_cast<double>(unique.size()) / static_cast<double>(rep.size());
}

double novel_ratio(const Repertoire& rep, const Repertoire& reference) {
  require_non_empty(rep, "novel_ratio");
  const std::set<std::string> unique(rep.begin(), rep.end());
  const std::set<std::string> ref(reference.begin(), reference.end());
  std::size_t novel = 0;
  for (const auto& s : unique) novel += ref.count(s) ? 0 : 1;
  return static_cast<double>(novel) / static_cast<double>(unique.size());
}

double shannon(const Repertoire& rep) {
  require_non_empty(rep, "shannon");
  return entropy(frequencies(rep));
}

double simpson(const Repertoire& rep) {
  require_non_empty(rep, "simpson");
  double s = 0.0;
  for (double q : frequencies(rep)) s += q * q;
  return 1.0 - s;
}

Repertoire subsample(const Repertoire& reference, std::size_t n, std::uint64_t seed) {
  if (n >= reference.size()) return reference;
  std::vector<std::size_t> idx(reference.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  Repertoire out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(reference[idx[i]]);
  return out;
}

double shannon_rel(const Repertoire& rep, const Repertoire& reference, std::uint64_t seed) {
  require_non_empty(rep, "shannon_rel");
  require_non_empty(reference, "shannon_rel reference");
  return relative(shannon(rep), shannon(subsample(reference, rep.size(), seed)));
}

double simpson_rel(const Repertoire& rep, const Repertoire& reference, std::uint64_t seed) {
  require_non_empty(rep, "simpson_rel");
  require_non_empty(reference, "simpson_rel reference");
  return relative(simpson(rep), simpson(subsample(reference, rep.size(), seed)));
}

double aa_div(const Repertoire& rep) {
  require_non_empty(rep, "aa_div");
  std::array<std::size_t, 20> counts{};
  std::size_t total = 0;
  for (const auto& s : rep) {
    seqdata::check_residues(s);
    for (char c : s) {
      ++counts[static_cast<std::size_t>(seqdata::Vocabulary::residue_id(c) - 1)];
      ++total;
    }
  }
  if (total == 0) return 0.0;
  std::vector<double> p;
  for (std::size_t c : counts) p.push_back(static_cast<double>(c) / static_cast<double>(total));
  return entropy(p) / std::log(20.0);
}

double length_realism(const Repertoire& rep, const Repertoire& reference) {
  require_non_empty(rep, "length_realism");
  require_non_empty(reference, "length_realism reference");
  const auto mean = [](const Repertoire& r) {
    double m = 0.0;
    for (const auto& s : r) m += static_cast<double>(s.size());
    return m / static_cast<double>(r.size());
  };
  const double mu_gen = mean(rep);
  const double mu_ref = mean(reference);
  double var = 0.0;
  for (const auto& s : reference) var += (static_cast<double>(s.size()) - mu_ref) * (static_cast<double>(s.size()) - mu_ref);
  const double sd = std::sqrt(var / static_cast<double>(reference.size()));
  if (sd == 0.0) return mu_gen == mu_ref ? 1.0 : 0.0;
  return std::exp(-std::abs(mu_gen - mu_ref) / sd);
}

std::array<double, 7> DiversityReport::values() const {
  return {jaccard2, diversity_ratio, novel_ratio, shannon_rel, simpson_rel, aa_div, length_realism};
}

DiversityReport diversity_report(const std::string& condition, const Repertoire& generated,
                                 const Repertoire& reference, std::uint64_t seed) {
  DiversityReport r;
  r.condition = condition;
  r.jaccard2 = jaccard(kmer_set(generated, 2), kmer_set(reference, 2));
  r.diversity_ratio = diversity_ratio(generated);
  r.novel_ratio = novel_ratio(generated, reference);
  r.shannon_rel = shannon_rel(generated, reference, seed);
  r.simpson_rel = simpson_rel(generated, reference, seed);
  r.aa_div = aa_div(generated);
  r.length_realism = length_realism(generated, reference);
  return r;
}

std::vector<double> composite_score(std::vector<DiversityReport>& reports) {
  if (reports.size() < 2) {
    throw std::invalid_argument("composite score needs at least two conditions to normalize across");
  }
  std::vector<double> sum(reports.size(), 0.0);
  std::vector<std::size_t> used(reports.size(), 0);
  for (std::size_t m = 0; m < 7; ++m) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& r : reports) {
      const double v = r.values()[m];
      if (std::isnan(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (std::size_t c = 0; c < reports.size(); ++c) {
      const double v = reports[c].values()[m];
      if (std::isnan(v)) continue;
      sum[c] += hi > lo ? (v - lo) / (hi - lo) : 0.5;
      ++used[c];
    }
  }
  std::vector<double> out(reports.size());
  for (std::size_t c = 0; c < reports.size(); ++c) {
    out[c] = used[c] ? sum[c] / static_cast<double>(used[c]) : kUndefined;
    reports[c].composite = out[c];
  }
  return out;
}

std::string format_diversity_row(const DiversityReport& r) {
  std::ostringstream os;
  os << r.condition;
  auto put = [&](double v) { os << ',' << (std::isnan(v) ? std::string("NA") : nn::format_double(v)); };
  for (double v : r.values()) put(v);
  put(r.composite);
  return os.str();
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double norm_levenshtein(std::string_view a, std::string_view b) {
  const std::size_t m = std::max(a.size(), b.size());
  return m == 0 ? 0.0 : static_cast<double>(levenshtein(a, b)) / static_cast<double>(m);
}

double norm_hamming(std::string_view a, std::string_view b) {
  const std::size_t m = std::max(a.size(), b.size());
  if (m == 0) return 0.0;
  const std::size_t overlap = std::min(a.size(), b.size());
  std::size_t d = m - overlap;
  for (std::size_t i = 0; i < overlap; ++i) d += a[i] != b[i] ? 1 : 0;
  return static_cast<double>(d) / static_cast<double>(m);
}

double exact_match_rate(const AlignedPairs& pairs) {
  if (pairs.empty()) throw std::invalid_argument("exact_match_rate needs at least one pair");
  std::size_t hits = 0;
  for (const auto& [g, r] : pairs) hits += g == r ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double js_divergence(const KmerSpectrum& a, const KmerSpectrum& b) {
  if (a.k != b.k) throw std::invalid_argument("spectra use different k");
  std::set<std::string> support;
  for (const auto& [kmer, p] : a.freq) support.insert(kmer);
  for (const auto& [kmer, p] : b.freq) support.insert(kmer);
  const auto get = [](const KmerSpectrum& s, const std::string& key) {
    auto it = s.freq.find(key);
    return it == s.freq.end() ? 0.0 : it->second;
  };
  double d = 0.0;
  for (const auto& key : support) {
    const double p = get(a, key);
    const double q = get(b, key);
    const double m = 0.5 * (p + q);
    const double tp = p > 0.0 ? p * std::log(p / m) : 0.0;
    const double tq = q > 0.0 ? q * std::log(q / m) : 0.0;
    d += 0.5 * (tp + tq);  // one commutative add per key keeps it exactly symmetric
  }
  return std::clamp(d, 0.0, std::log(2.0));
}

SimilarityReport similarity_report(const AlignedPairs& pairs) {
  SimilarityReport r;
  r.exact_match_rate = exact_match_rate(pairs);
  Repertoire gen, ref;
  for (const auto& [g, t] : pairs) {
    r.mean_norm_hamming += norm_hamming(g, t);
    r.mean_norm_levenshtein += norm_levenshtein(g, t);
    gen.push_back(g);
    ref.push_back(t);
  }
  r.mean_norm_hamming /= static_cast<double>(pairs.size());
  r.mean_norm_levenshtein /= static_cast<double>(pairs.size());
  r.jaccard3 = jaccard(kmer_set(gen, 3), kmer_set(ref, 3));
  return r;
}

}  // namespace lsmtcr::metrics
