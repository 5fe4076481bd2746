#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctm {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumReservedTokens = 5;

inline constexpr std::array<std::string_view, kNumReservedTokens>
    kReservedTokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

// Bijective token <-> id map. Ids 0..4 are the reserved tokens above; word
// continuation pieces carry a "##" prefix.
class Vocab {
 public:
  // Reserved tokens, every character seen (plain and "##" form), then whole
  // words with frequency >= min_freq by descending frequency, then shared
  // prefix/suffix pieces, until max_size. Ties break lexicographically.
  static Vocab build(std::span<const std::string> corpus, std::size_t max_size,
                     std::size_t min_freq);
  static Vocab from_tokens(std::vector<std::string> tokens);
  // One token per line, line number = id.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::optional<int> find(std::string_view token) const;
  int id_or_unk(std::string_view token) const;
  const std::string& token(int id) const;
  bool is_reserved(int id) const { return id >= 0 && id < kNumReservedTokens; }
  bool contains(std::string_view token) const { return find(token).has_value(); }
  // Ids of non-reserved, non-continuation tokens (whole-word entries).
  const std::vector<int>& word_ids() const { return word_ids_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> word_ids_;
};

// Lowercases, splits on whitespace and isolates ASCII punctuation.
std::vector<std::string> basic_tokenize(std::string_view text);
// basic_tokenize joined by single spaces.
std::string normalize_text(std::string_view text);

struct WordpieceOutput {
  std::vector<int> ids;
  std::vector<std::string> pieces;
};

// Greedy longest-match-first over each basic token; a word that cannot be
// fully covered becomes a single [UNK].
WordpieceOutput tokenize_wordpiece(std::string_view text, const Vocab& vocab);
// Inverse of tokenize_wordpiece for fully covered text: "##" pieces glue onto
// the previous piece, everything else is space separated.
std::string detokenize(std::span<const std::string> pieces);

// Character rows for the character-level front-end.
inline constexpr std::size_t kCharRowLength = 50;
inline constexpr std::size_t kMaxInteriorChars = 47;
inline constexpr int kCharPad = 0;
inline constexpr int kCharBow = 1;
inline constexpr int kCharEow = 2;
inline constexpr int kCharUnknown = 3;
inline constexpr int kFirstPrintableCharId = 4;
// Printable ASCII ' '..'~' plus the four markers above.
inline constexpr std::size_t kCharAlphabetSize = kFirstPrintableCharId + 95;

using CharRow = std::array<int, kCharRowLength>;

int char_id(char c);
// [BOW, c_1..c_k, EOW, 0...] with k <= 47 (longer tokens are truncated).
CharRow encode_chars(std::string_view token);

}  // namespace ctm
