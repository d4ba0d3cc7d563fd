#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lsmtcr::seqdata {

/// Input-file problem. line() is 1-based (the header is line 1); 0 when the
/// problem is not tied to a line.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class Chain { alpha, beta };

std::string_view to_string(Chain chain);
Chain parse_chain(std::string_view text);

struct PairedRecord {
  std::string epitope;
  std::optional<std::string> cdr3_alpha;
  std::optional<std::string> cdr3_beta;
  std::optional<std::string> v_alpha;
  std::optional<std::string> j_alpha;
  std::optional<std::string> v_beta;
  std::optional<std::string> j_beta;
  std::optional<std::string> full_alpha;
  std::optional<std::string> full_beta;

  const std::optional<std::string>& cdr3(Chain c) const { return c == Chain::alpha ? cdr3_alpha : cdr3_beta; }
  const std::optional<std::string>& v_gene(Chain c) const { return c == Chain::alpha ? v_alpha : v_beta; }
  const std::optional<std::string>& j_gene(Chain c) const { return c == Chain::alpha ? j_alpha : j_beta; }
  const std::optional<std::string>& full(Chain c) const { return c == Chain::alpha ? full_alpha : full_beta; }
};

inline constexpr std::string_view kDatasetHeader =
    "epitope,cdr3_alpha,cdr3_beta,v_alpha,j_alpha,v_beta,j_beta,full_alpha,full_beta";

/// Checks the record invariants; throws std::invalid_argument with a message
/// describing the first violation.
void validate_record(const PairedRecord& record);

std::vector<PairedRecord> parse_dataset(std::istream& in);
std::vector<PairedRecord> load_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, const std::vector<PairedRecord>& records);

/// Plain-text corpus, one residue sequence per line. Blank lines are skipped.
std::vector<std::string> parse_corpus(std::istream& in);
std::vector<std::string> load_corpus(const std::filesystem::path& path);

/// Splits a CSV line on commas; no quoting (fields never contain commas).
std::vector<std::string> split_csv_line(std::string_view line);

/// Ordered unique V and J labels for one chain.
class GeneVocab {
 public:
  GeneVocab() = default;
  GeneVocab(std::vector<std::string> v_labels, std::vector<std::string> j_labels);

  /// Sorted unique labels of the records that carry both genes for the chain.
  static GeneVocab build(const std::vector<PairedRecord>& records, Chain chain);

  const std::vector<std::string>& v_labels() const { return v_labels_; }
  const std::vector<std::string>& j_labels() const { return j_labels_; }
  std::optional<std::size_t> v_index(std::string_view label) const;
  std::optional<std::size_t> j_index(std::string_view label) const;
  /// Throws std::out_of_range naming the label when it is not in the vocabulary.
  std::size_t require_v(std::string_view label) const;
  std::size_t require_j(std::string_view label) const;

 private:
  std::vector<std::string> v_labels_;
  std::vector<std::string> j_labels_;
};

}  // namespace lsmtcr::seqdata
