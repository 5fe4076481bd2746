#include "ctm/tokenize.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "ctm/errors.hpp"

namespace ctm {

namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> basic_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  flush();
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const std::string& w : basic_tokenize(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumReservedTokens) {
    throw DataError("vocabulary is missing reserved tokens");
  }
  for (int i = 0; i < kNumReservedTokens; ++i) {
    if (tokens[static_cast<std::size_t>(i)] != kReservedTokens[static_cast<std::size_t>(i)]) {
      throw DataError("vocabulary id " + std::to_string(i) + " must be " +
                      std::string(kReservedTokens[static_cast<std::size_t>(i)]));
    }
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    const std::string& t = v.tokens_[i];
    if (t.empty()) throw DataError("empty vocabulary entry at id " + std::to_string(i));
    if (!v.index_.emplace(t, static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary entry '" + t + "'");
    }
    if (i >= kNumReservedTokens && t.rfind("##", 0) != 0) {
      v.word_ids_.push_back(static_cast<int>(i));
    }
  }
  return v;
}

Vocab Vocab::build(std::span<const std::string> corpus, std::size_t max_size,
                   std::size_t min_freq) {
  if (corpus.empty()) throw ConfigError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> word_freq;
  for (const std::string& text : corpus) {
    for (std::string& w : basic_tokenize(text)) ++word_freq[std::move(w)];
  }

  std::set<std::string> alphabet;
  for (const auto& [word, _] : word_freq) {
    for (std::size_t i = 0; i < word.size(); ++i) {
      alphabet.insert(word.substr(i, 1));
      alphabet.insert("##" + word.substr(i, 1));
    }
  }
  if (max_size < kNumReservedTokens + alphabet.size()) {
    throw ConfigError("build_vocab: max_size " + std::to_string(max_size) +
                      " cannot hold " + std::to_string(kNumReservedTokens) +
                      " reserved tokens and " + std::to_string(alphabet.size()) +
                      " character pieces");
  }

  std::vector<std::string> tokens(kReservedTokens.begin(), kReservedTokens.end());
  std::set<std::string> taken(tokens.begin(), tokens.end());
  for (const std::string& piece : alphabet) {
    tokens.push_back(piece);
    taken.insert(piece);
  }

  // Candidate pieces are word prefixes and "##" suffixes shared by at least
  // two word types; their score is the summed frequency of those words.
  struct PieceStats {
    std::size_t score = 0;
    std::size_t types = 0;
  };
  std::map<std::string, PieceStats> pieces;
  for (const auto& [word, freq] : word_freq) {
    for (std::size_t k = 2; k < word.size(); ++k) {
      auto& s = pieces[word.substr(0, k)];
      s.score += freq;
      ++s.types;
    }
    for (std::size_t k = 1; k + 2 <= word.size(); ++k) {
      auto& s = pieces["##" + word.substr(k)];
      s.score += freq;
      ++s.types;
    }
  }

  // (negated score, kind, text): whole words win ties against pieces.
  std::vector<std::tuple<long long, int, std::string>> candidates;
  for (const auto& [word, freq] : word_freq) {
    if (freq >= min_freq) candidates.emplace_back(-static_cast<long long>(freq), 0, word);
  }
  for (const auto& [piece, s] : pieces) {
    if (s.types >= 2 && s.score >= min_freq) {
      candidates.emplace_back(-static_cast<long long>(s.score), 1, piece);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  for (const auto& [_, kind, text] : candidates) {
    if (tokens.size() >= max_size) break;
    if (taken.insert(text).second) tokens.push_back(text);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const std::string& t : tokens_) out << t << '\n';
  if (!out) throw DataError("failed writing vocabulary " + path.string());
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id_or_unk(std::string_view token) const {
  return find(token).value_or(kUnkId);
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

WordpieceOutput tokenize_wordpiece(std::string_view text, const Vocab& vocab) {
  WordpieceOutput out;
  const std::string& unk = vocab.token(kUnkId);
  for (const std::string& word : basic_tokenize(text)) {
    if (word.size() > kMaxCharsPerWord) {
      out.ids.push_back(kUnkId);
      out.pieces.push_back(unk);
      continue;
    }
    std::vector<std::pair<int, std::string>> sub;
    std::size_t start = 0;
    bool bad = false;
    while (start < word.size()) {
      std::size_t end = word.size();
      std::optional<int> found;
      std::string piece;
      while (start < end) {
        piece = (start > 0 ? "##" : "") + word.substr(start, end - start);
        found = vocab.find(piece);
        if (found) break;
        --end;
      }
      if (!found) {
        bad = true;
        break;
      }
      sub.emplace_back(*found, std::move(piece));
      start = end;
    }
    if (bad) {
      out.ids.push_back(kUnkId);
      out.pieces.push_back(unk);
    } else {
      for (auto& [id, piece] : sub) {
        out.ids.push_back(id);
        out.pieces.push_back(std::move(piece));
      }
    }
  }
  return out;
}

std::string detokenize(std::span<const std::string> pieces) {
  std::string out;
  for (const std::string& p : pieces) {
    if (p.rfind("##", 0) == 0) {
      out += p.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += p;
    }
  }
  return out;
}

int char_id(char c) {
  const auto u = static_cast<unsigned char>(c);
  if (u >= 32 && u <= 126) return kFirstPrintableCharId + (u - 32);
  return kCharUnknown;
}

CharRow encode_chars(std::string_view token) {
  if (token.empty()) throw ContractError("encode_chars: empty token");
  CharRow row{};
  row.fill(kCharPad);
  row[0] = kCharBow;
  const std::size_t n = std::min(token.size(), kMaxInteriorChars);
  for (std::size_t i = 0; i < n; ++i) row[i + 1] = char_id(token[i]);
  row[n + 1] = kCharEow;
  return row;
}

}  // namespace ctm
