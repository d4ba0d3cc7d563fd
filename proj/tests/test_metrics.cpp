#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "lsmtcr/metrics/metrics.hpp"
#include "lsmtcr/util/random.hpp"

using namespace lsmtcr;
using namespace lsmtcr::metrics;

namespace {

// plain recursion, no memo -- only for short strings
std::size_t edit_oracle(std::string_view a, std::string_view b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  const std::size_t sub = edit_oracle(a.substr(1), b.substr(1)) + (a[0] != b[0]);
  return std::min({sub, edit_oracle(a.substr(1), b) + 1, edit_oracle(a, b.substr(1)) + 1});
}

std::string random_string(Rng& rng, std::size_t max_len, std::string_view alphabet) {
  std::string s(rng.below(max_len + 1), ' ');
  for (char& c : s) c = alphabet[rng.below(alphabet.size())];
  return s;
}

KmerSpectrum random_spectrum(Rng& rng) {
  KmerSpectrum s{1, {}};
  double total = 0;
  for (char c : std::string("ABCDEF")) {
    if (rng.uniform(0, 1) < 0.4) continue;
    const double w = rng.uniform(0, 1);
    s.freq[std::string(1, c)] = w;
    total += w;
  }
  if (s.freq.empty()) s.freq["A"] = total = 1.0;
  for (auto& [k, v] : s.freq) v /= total;
  return s;
}

DiversityReport report(const std::string& name, std::array<double, 7> v) {
  DiversityReport r;
  r.condition = name;
  r.jaccard2 = v[0];
  r.diversity_ratio = v[1];
  r.novel_ratio = v[2];
  r.shannon_rel = v[3];
  r.simpson_rel = v[4];
  r.aa_div = v[5];
  r.length_realism = v[6];
  return r;
}

}  // namespace

TEST(Kmers, SetsAndSpectra) {
  EXPECT_EQ(kmer_set({"CAS"}, 2), (KmerSet{"CA", "AS"}));
  const auto aa = kmer_spectrum({"AA", "AA"}, 2);
  ASSERT_EQ(aa.freq.size(), 1u);
  EXPECT_DOUBLE_EQ(aa.freq.at("AA"), 1.0);
  const auto s = kmer_spectrum({"CAS", "AST"}, 2);
  EXPECT_DOUBLE_EQ(s.freq.at("CA"), 0.25);
  EXPECT_DOUBLE_EQ(s.freq.at("AS"), 0.5);
  EXPECT_DOUBLE_EQ(s.freq.at("ST"), 0.25);
  EXPECT_EQ(kmer_spectrum({"C", "CASS"}, 3).freq.size(), 2u);  // short ones skipped
  EXPECT_THROW(kmer_set({"CA", "A"}, 3), std::invalid_argument);
  EXPECT_THROW(kmer_set({"CA"}, 0), std::invalid_argument);
}

TEST(Jaccard, HandValuesAndSymmetry) {
  const KmerSet a{"CA", "AS", "SS"}, b{"CA", "AS", "ST"};
  EXPECT_DOUBLE_EQ(jaccard(a, b), 0.5);
  EXPECT_EQ(jaccard(a, b), jaccard(b, a));
  EXPECT_DOUBLE_EQ(jaccard(a, a), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(a, {"QQ"}), 0.0);
  EXPECT_THROW(jaccard({}, {}), std::invalid_argument);
}

TEST(Diversity, RatiosAndIndices) {
  EXPECT_DOUBLE_EQ(diversity_ratio(Repertoire(10, "CASSF")), 0.1);
  EXPECT_DOUBLE_EQ(diversity_ratio({"A", "C", "D"}), 1.0);
  EXPECT_DOUBLE_EQ(novel_ratio({"A", "C", "D", "E", "A"}, {"A", "C", "Q"}), 0.5);
  EXPECT_DOUBLE_EQ(novel_ratio({"A", "C"}, {"D"}), 1.0);
  for (std::size_t n : {1, 2, 5, 17}) {
    Repertoire rep;
    for (std::size_t i = 0; i < n; ++i) rep.push_back(std::string(i + 1, 'A'));
    EXPECT_DOUBLE_EQ(shannon(rep), std::log(static_cast<double>(n)));
  }
  EXPECT_EQ(shannon(Repertoire(4, "CA")), 0.0);
  EXPECT_EQ(simpson(Repertoire(4, "CA")), 0.0);
  EXPECT_DOUBLE_EQ(simpson({"A", "C", "A", "C"}), 0.5);
  // relative variant with a constant reference has no denominator
  EXPECT_TRUE(std::isnan(shannon_rel({"A", "C"}, Repertoire(6, "Q"), 1)));
  EXPECT_DOUBLE_EQ(shannon_rel({"A", "C"}, {"D", "E"}, 1), 1.0);
}

TEST(Diversity, SubsampleIsSeededAndWithoutReplacement) {
  Repertoire ref;
  for (int i = 0; i < 50; ++i) ref.push_back(std::string(1 + i % 7, 'A') + std::to_string(i));
  const auto a = subsample(ref, 20, 4), b = subsample(ref, 20, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::set<std::string>(a.begin(), a.end()).size(), 20u);
  EXPECT_EQ(subsample(ref, 80, 4).size(), 50u);
}

TEST(Diversity, AminoAcidEntropy) {
  EXPECT_NEAR(aa_div({"ACDEFGHIKLMNPQRSTVWY"}), 1.0, 1e-12);
  EXPECT_EQ(aa_div({"AAAA", "AA"}), 0.0);
  EXPECT_NEAR(aa_div({"AC", "CA"}), std::log(2.0) / std::log(20.0), 1e-12);
  EXPECT_NEAR(aa_div({"AC"}), 0.2314, 5e-5);
}

TEST(Diversity, LengthRealism) {
  const Repertoire ref{"AAA", "AAAAA"};  // mean 4, population sd 1
  EXPECT_DOUBLE_EQ(length_realism({"AAAA"}, ref), 1.0);
  EXPECT_NEAR(length_realism({"AAAAA"}, ref), std::exp(-1.0), 1e-12);
  EXPECT_LT(length_realism({std::string(400, 'A')}, ref), 1e-100);
  EXPECT_EQ(length_realism({"AA"}, {"CC", "DD"}), 1.0);
  EXPECT_EQ(length_realism({"AAA"}, {"CC", "DD"}), 0.0);
}

TEST(Composite, NormalizationRule) {
  std::vector<DiversityReport> rs{report("hi", {1, 1, 1, 1, 1, 1, 1}), report("lo", {0, .2, .3, .1, .1, .1, .5}),
                                  report("mid", {.5, .5, .5, .5, .5, .5, .6})};
  const auto c = composite_score(rs);
  EXPECT_DOUBLE_EQ(c[0], 1.0);
  EXPECT_DOUBLE_EQ(c[1], 0.0);
  EXPECT_EQ(rs[0].composite, c[0]);
  std::vector<DiversityReport> one_diff{report("a", {.3, .5, .5, .5, .5, .5, .5}),
                                        report("b", {.4, .5, .5, .5, .5, .5, .5})};
  const auto d = composite_score(one_diff);
  EXPECT_NEAR(d[0], 0.5 - 0.5 / 7, 1e-12);
  EXPECT_NEAR(d[1], 0.5 + 0.5 / 7, 1e-12);
  std::vector<DiversityReport> single{report("a", {})};
  EXPECT_THROW(composite_score(single), std::invalid_argument);
}

TEST(Composite, InvariantUnderIncreasingAffineMaps) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<DiversityReport> a, b;
    std::array<double, 7> scale{}, shift{};
    for (std::size_t m = 0; m < 7; ++m) {
      scale[m] = rng.uniform(0.1, 10);
      shift[m] = rng.uniform(-5, 5);
    }
    for (int k = 0; k < 4; ++k) {
      std::array<double, 7> v{}, w{};
      for (std::size_t m = 0; m < 7; ++m) {
        v[m] = rng.uniform(0, 1);
        w[m] = scale[m] * v[m] + shift[m];
      }
      a.push_back(report("c", v));
      b.push_back(report("c", w));
    }
    const auto ca = composite_score(a), cb = composite_score(b);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(ca[k], cb[k], 1e-12);
  }
}

TEST(Composite, UndefinedEntriesAreLeftOut) {
  std::vector<DiversityReport> rs{report("a", {1, 1, 1, 1, 1, 1, 1}), report("b", {0, 0, 0, 0, 0, 0, 0})};
  rs[1].shannon_rel = kUndefined;
  const auto c = composite_score(rs);
  EXPECT_DOUBLE_EQ(c[1], 0.0);
  EXPECT_NEAR(c[0], (6 + 0.5) / 7, 1e-12);  // shannon_rel: one defined value → constant
}

TEST(Diversity, HeaderAndRow) {
  EXPECT_EQ(kDiversityHeader,
            "condition,jaccard2,diversity_ratio,novel_ratio,shannon_rel,simpson_rel,aa_div,length_realism,composite");
  const auto r = diversity_report("t1.0", {"CASSF", "CASSF", "CASQF"}, {"CASSF", "CATTF", "CASQY"}, 3);
  EXPECT_NEAR(r.diversity_ratio, 2.0 / 3, 1e-12);
  EXPECT_NEAR(r.novel_ratio, 0.5, 1e-12);
  const std::string row = format_diversity_row(r);
  EXPECT_EQ(row.rfind("t1.0,", 0), 0u);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 8);
}

TEST(Distances, LevenshteinMatchesRecursion) {
  EXPECT_EQ(levenshtein("CASSL", "CASSF"), 1u);
  EXPECT_EQ(levenshtein("", ""), 0u);
  EXPECT_EQ(norm_levenshtein("", ""), 0.0);
  Rng rng(12);
  for (int i = 0; i < 400; ++i) {
    const std::string a = random_string(rng, 8, "ACG"), b = random_string(rng, 8, "ACG");
    ASSERT_EQ(levenshtein(a, b), edit_oracle(a, b)) << a << " / " << b;
    ASSERT_EQ(levenshtein(a, b), levenshtein(b, a));
  }
}

TEST(Distances, TriangleAndHammingBound) {
  Rng rng(13);
  for (int i = 0; i < 500; ++i) {
    const std::string a = random_string(rng, 10, "ACDE"), b = random_string(rng, 10, "ACDE"),
                      c = random_string(rng, 10, "ACDE");
    ASSERT_LE(levenshtein(a, c), levenshtein(a, b) + levenshtein(b, c));
    const double m = std::max(a.size(), b.size());
    if (m > 0) ASSERT_LE(levenshtein(a, b), norm_hamming(a, b) * m + 1e-9);
  }
}

TEST(Distances, HammingAndExactMatch) {
  EXPECT_EQ(norm_hamming("CASS", "CASS"), 0.0);
  EXPECT_EQ(norm_hamming("AAAA", "CCCC"), 1.0);
  EXPECT_DOUBLE_EQ(norm_hamming("AAAA", "AAA"), 0.25);
  EXPECT_EQ(norm_hamming("", ""), 0.0);
  const AlignedPairs pairs{{"CASA", "CASA"}, {"CASC", "CASC"}, {"CASD", "CASE"}, {"CASF", "CASF"}, {"CASG", "CASH"}};
  EXPECT_DOUBLE_EQ(exact_match_rate(pairs), 0.6);
  EXPECT_THROW(exact_match_rate({}), std::invalid_argument);
  const auto s = similarity_report(pairs);
  EXPECT_DOUBLE_EQ(s.mean_norm_hamming, 0.1);
  EXPECT_DOUBLE_EQ(s.mean_norm_levenshtein, 0.1);
  EXPECT_DOUBLE_EQ(s.jaccard3, 0.5);  // 4 shared of 8: {CAS, ASA, ASC, ASD, ASF, ASG} vs {CAS, ASA, ASC, ASE, ASF, ASH}
}

TEST(JensenShannon, HandValuesAndBounds) {
  const KmerSpectrum p{1, {{"a", 1.0}}}, q{1, {{"a", 0.5}, {"b", 0.5}}};
  // direct sums with M = {a: .75, b: .25}
  const double kl_p = 1.0 * std::log(1.0 / 0.75);
  const double kl_q = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
  EXPECT_NEAR(js_divergence(p, q), 0.5 * kl_p + 0.5 * kl_q, 1e-14);
  EXPECT_EQ(js_divergence(p, p), 0.0);
  EXPECT_NEAR(js_divergence(p, KmerSpectrum{1, {{"z", 1.0}}}), std::log(2.0), 1e-14);
  EXPECT_THROW(js_divergence(p, KmerSpectrum{2, {{"zz", 1.0}}}), std::invalid_argument);
  Rng rng(14);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_spectrum(rng), b = random_spectrum(rng);
    const double d = js_divergence(a, b);
    ASSERT_EQ(d, js_divergence(b, a));
    ASSERT_GE(d, -1e-15);
    ASSERT_LE(d, std::log(2.0) + 1e-12);
  }
}
