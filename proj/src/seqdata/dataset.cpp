#include "lsmtcr/seqdata/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include "lsmtcr/seqdata/vocab.hpp"

namespace lsmtcr::seqdata {
namespace {

constexpr std::array<std::string_view, 9> kColumns = {
    "epitope", "cdr3_alpha", "cdr3_beta", "v_alpha", "j_alpha",
    "v_beta",  "j_beta",     "full_alpha", "full_beta"};

std::optional<std::string> optional_field(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return s;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

void check_sequence(const std::optional<std::string>& seq, std::string_view column) {
  if (!seq) return;
  try {
    check_residues(*seq);
  } catch (const InvalidResidue& e) {
    throw std::invalid_argument(std::string(column) + ": " + e.what());
  }
}

std::size_t find_label(const std::vector<std::string>& labels, std::string_view label) {
  const auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it != labels.end() && *it == label) return static_cast<std::size_t>(it - labels.begin());
  return labels.size();
}

}  // namespace

DataError::DataError(const std::string& what, std::size_t line)
    : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
      line_(line) {}

std::string_view to_string(Chain chain) { return chain == Chain::alpha ? "alpha" : "beta"; }

Chain parse_chain(std::string_view text) {
  if (text == "alpha") return Chain::alpha;
  if (text == "beta") return Chain::beta;
  throw std::invalid_argument("chain must be 'alpha' or 'beta', got '" + std::string(text) + "'");
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

void validate_record(const PairedRecord& r) {
  if (r.epitope.empty()) throw std::invalid_argument("epitope is empty");
  check_sequence(r.epitope, "epitope");
  check_sequence(r.cdr3_alpha, "cdr3_alpha");
  check_sequence(r.cdr3_beta, "cdr3_beta");
  check_sequence(r.full_alpha, "full_alpha");
  check_sequence(r.full_beta, "full_beta");
  for (Chain c : {Chain::alpha, Chain::beta}) {
    const auto& full = r.full(c);
    const auto& cdr3 = r.cdr3(c);
    if (full && cdr3 && full->find(*cdr3) == std::string::npos) {
      throw std::invalid_argument("full_" + std::string(to_string(c)) + " does not contain cdr3_" +
                                  std::string(to_string(c)));
    }
  }
}

std::vector<PairedRecord> parse_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset is empty (missing header)", 1);
  strip_cr(line);
  const auto header = split_csv_line(line);
  for (auto column : kColumns) {
    if (std::find(header.begin(), header.end(), column) == header.end()) {
      throw DataError("missing required column '" + std::string(column) + "'", 1);
    }
  }
  if (line != kDatasetHeader) {
    throw DataError("header must be exactly '" + std::string(kDatasetHeader) + "'", 1);
  }

  std::vector<PairedRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != kColumns.size()) {
      throw DataError("expected " + std::to_string(kColumns.size()) + " fields, found " +
                          std::to_string(f.size()),
                      line_no);
    }
    PairedRecord r;
    r.epitope = f[0];
    r.cdr3_alpha = optional_field(f[1]);
    r.cdr3_beta = optional_field(f[2]);
    r.v_alpha = optional_field(f[3]);
    r.j_alpha = optional_field(f[4]);
    r.v_beta = optional_field(f[5]);
    r.j_beta = optional_field(f[6]);
    r.full_alpha = optional_field(f[7]);
    r.full_beta = optional_field(f[8]);
    try {
      validate_record(r);
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what(), line_no);
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<PairedRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'", 0);
  return parse_dataset(in);
}

void write_dataset(std::ostream& out, const std::vector<PairedRecord>& records) {
  out << kDatasetHeader << '\n';
  const auto opt = [](const std::optional<std::string>& s) -> const std::string& {
    static const std::string empty;
    return s ? *s : empty;
  };
  for (const auto& r : records) {
    out << r.epitope << ',' << opt(r.cdr3_alpha) << ',' << opt(r.cdr3_beta) << ','
        << opt(r.v_alpha) << ',' << opt(r.j_alpha) << ',' << opt(r.v_beta) << ','
        << opt(r.j_beta) << ',' << opt(r.full_alpha) << ',' << opt(r.full_beta) << '\n';
  }
}

std::vector<std::string> parse_corpus(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    try {
      check_residues(line);
    } catch (const InvalidResidue& e) {
      throw DataError(e.what(), line_no);
    }
    out.push_back(std::move(line));
  }
  return out;
}

std::vector<std::string> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path.string() + "'", 0);
  return parse_corpus(in);
}

GeneVocab::GeneVocab(std::vector<std::string> v_labels, std::vector<std::string> j_labels)
    : v_labels_(std::move(v_labels)), j_labels_(std::move(j_labels)) {
  for (auto* labels : {&v_labels_, &j_labels_}) {
    if (!std::is_sorted(labels->begin(), labels->end()) ||
        std::adjacent_find(labels->begin(), labels->end()) != labels->end()) {
      std::sort(labels->begin(), labels->end());
      if (std::adjacent_find(labels->begin(), labels->end()) != labels->end()) {
        throw std::invalid_argument("gene labels must be unique");
      }
    }
  }
}

GeneVocab GeneVocab::build(const std::vector<PairedRecord>& records, Chain chain) {
  std::set<std::string> v, j;
  for (const auto& r : records) {
    if (r.v_gene(chain) && r.j_gene(chain)) {
      v.insert(*r.v_gene(chain));
      j.insert(*r.j_gene(chain));
    }
  }
  return GeneVocab({v.begin(), v.end()}, {j.begin(), j.end()});
}

std::optional<std::size_t> GeneVocab::v_index(std::string_view label) const {
  const std::size_t i = find_label(v_labels_, label);
  return i < v_labels_.size() ? std::optional(i) : std::nullopt;
}

std::optional<std::size_t> GeneVocab::j_index(std::string_view label) const {
  const std::size_t i = find_label(j_labels_, label);
  return i < j_labels_.size() ? std::optional(i) : std::nullopt;
}

std::size_t GeneVocab::require_v(std::string_view label) const {
  if (auto i = v_index(label)) return *i;
  throw std::out_of_range("V gene '" + std::string(label) + "' is not in the vocabulary");
}

std::size_t GeneVocab::require_j(std::string_view label) const {
  if (auto i = j_index(label)) return *i;
  throw std::out_of_range("J gene '" + std::string(label) + "' is not in the vocabulary");
}

}  // namespace lsmtcr::seqdata
