#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ctm {

// Which embedding front-end a sequence is prepared for: wordpiece ids
// (BERT-style) or whole words encoded as character rows (CharacterBERT-style).
enum class FrontEnd { kWordpiece, kChar };

std::string_view front_end_name(FrontEnd f);
FrontEnd parse_front_end(std::string_view name);

// Segment lengths of "[CLS] x [SEP] e h": n title units, m entity units and
// p hypothesis units (pieces for wordpiece, words for char).
struct SequenceLayout {
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t p = 0;

  std::size_t total() const { return 2 + n + m + p; }
  std::size_t sep_index() const { return n + 1; }
  std::size_t entity_begin() const { return n + 2; }
  std::size_t hypothesis_begin() const { return n + m + 2; }
};

// A model-ready sequence. Positions at or past layout.total() are [PAD]
// rows that are masked out of attention.
struct FormattedInput {
  FrontEnd front_end = FrontEnd::kWordpiece;
  SequenceLayout layout;
  // Vocabulary ids. For the char front-end a word's id is its whole-word
  // vocabulary entry or [UNK]; these ids only serve as MLM targets.
  std::vector<int> ids;
  std::vector<std::string> tokens;
  // True where the position is a reserved token ([CLS], [SEP], [PAD],
  // [MASK]) or a prompt placeholder rather than text.
  std::vector<bool> reserved;
  // The hypothesis slot holds p placeholders to be filled by prompt rows.
  bool prompt_slot = false;

  std::size_t length() const { return ids.size(); }
  std::vector<bool> attention_mask() const;
};

}  // namespace ctm
