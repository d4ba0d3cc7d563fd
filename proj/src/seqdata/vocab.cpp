#include "lsmtcr/seqdata/vocab.hpp"

#include <algorithm>
#include <array>

namespace lsmtcr::seqdata {
namespace {

constexpr std::array<int, 256> make_lookup() {
  std::array<int, 256> table{};
  for (auto& v : table) v = -1;
  for (std::size_t i = 0; i < Vocabulary::residues.size(); ++i) {
    table[static_cast<unsigned char>(Vocabulary::residues[i])] = static_cast<int>(i) + 1;
  }
  return table;
}

constexpr auto kLookup = make_lookup();

}  // namespace

InvalidResidue::InvalidResidue(char residue, std::size_t position)
    : std::invalid_argument("non-canonical residue '" + std::string(1, residue) +
                            "' at position " + std::to_string(position)),
      residue_(residue),
      position_(position) {}

const std::vector<std::string>& Vocabulary::symbols() {
  static const std::vector<std::string> table = [] {
    std::vector<std::string> s{"<pad>"};
    for (char c : residues) s.emplace_back(1, c);
    s.insert(s.end(), {"<mask>", "<bos>", "<eos>", "<unk>"});
    return s;
  }();
  return table;
}

bool Vocabulary::is_residue(char c) { return kLookup[static_cast<unsigned char>(c)] > 0; }

int Vocabulary::residue_id(char c) { return kLookup[static_cast<unsigned char>(c)]; }

char Vocabulary::residue_char(int id) {
  if (!is_residue_id(id)) throw std::out_of_range("token id is not a residue: " + std::to_string(id));
  return residues[static_cast<std::size_t>(id - 1)];
}

void check_residues(std::string_view seq) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!Vocabulary::is_residue(seq[i])) throw InvalidResidue(seq[i], i + 1);
  }
}

TokenSequence Vocabulary::encode(std::string_view seq, Scheme scheme, std::size_t max_len) {
  if (seq.empty()) throw std::invalid_argument("cannot encode an empty sequence");
  TokenSequence out;
  out.ids.reserve(seq.size() + 2);
  if (scheme == Scheme::bos_eos) out.ids.push_back(bos_id);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const int id = residue_id(seq[i]);
    if (id < 0) throw InvalidResidue(seq[i], i + 1);
    out.ids.push_back(id);
  }
  if (scheme == Scheme::bos_eos) out.ids.push_back(eos_id);
  out.length = out.ids.size();
  if (max_len != 0 && out.length > max_len) {
    throw std::invalid_argument("encoded length " + std::to_string(out.length) +
                                " exceeds maximum " + std::to_string(max_len));
  }
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id == eos_id) break;
    if (id == pad_id || id == bos_id) continue;
    out.push_back(is_residue_id(id) ? residue_char(id) : '?');
  }
  return out;
}

std::uint64_t Vocabulary::hash() {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : symbols()) {
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<TokenSequence> pad_batch(std::vector<TokenSequence> batch) {
  std::size_t width = 0;
  for (const auto& s : batch) width = std::max(width, s.ids.size());
  for (auto& s : batch) s.ids.resize(width, Vocabulary::pad_id);
  return batch;
}

}  // namespace lsmtcr::seqdata
