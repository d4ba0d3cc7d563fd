#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lsmtcr::seqdata {

/// Raised when a residue string contains a character outside the 20
/// canonical amino acids.
class InvalidResidue : public std::invalid_argument {
 public:
  InvalidResidue(char residue, std::size_t position);
  char residue() const { return residue_; }
  std::size_t position() const { return position_; }  // 1-based

 private:
  char residue_;
  std::size_t position_;
};

enum class Scheme { plain, bos_eos };

struct TokenSequence {
  std::vector<int> ids;
  std::size_t length = 0;  // non-pad tokens
};

/// Fixed token layout: PAD=0, A..Y (alphabetical one-letter codes) = 1..20,
/// MASK=21, BOS=22, EOS=23, UNK=24.
class Vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int mask_id = 21;
  static constexpr int bos_id = 22;
  static constexpr int eos_id = 23;
  static constexpr int unk_id = 24;
  static constexpr std::size_t size = 25;
  static constexpr std::string_view residues = "ACDEFGHIKLMNPQRSTVWY";

  static const std::vector<std::string>& symbols();

  static bool is_residue(char c);
  static int residue_id(char c);  // -1 if not canonical
  static bool is_residue_id(int id) { return id >= 1 && id <= 20; }
  static char residue_char(int id);

  /// Tokenizes a residue string. Throws InvalidResidue on the first
  /// non-canonical character and std::invalid_argument when the string is
  /// empty or the encoded length exceeds max_len (0 = unlimited).
  static TokenSequence encode(std::string_view seq, Scheme scheme, std::size_t max_len = 0);

  /// Inverse of encode: skips PAD and BOS, stops at EOS.
  static std::string decode(const std::vector<int>& ids);

  /// FNV-1a over the symbol table, stored in checkpoint metadata.
  static std::uint64_t hash();
};

/// Validates that every character is canonical; throws InvalidResidue.
void check_residues(std::string_view seq);

/// Right-pads every sequence with pad_id to the longest one in the batch.
std::vector<TokenSequence> pad_batch(std::vector<TokenSequence> batch);

}  // namespace lsmtcr::seqdata
