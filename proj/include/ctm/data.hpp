#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ctm/rng.hpp"
#include "ctm/sequence.hpp"
#include "ctm/tokenize.hpp"

namespace ctm {

enum class EntityClass { kBrand = 0, kProduct = 1, kFeature = 2 };
inline constexpr std::size_t kNumClasses = 3;
// Fixed class order; also the tie-break order at inference.
inline constexpr std::array<EntityClass, kNumClasses> kAllClasses = {
    EntityClass::kBrand, EntityClass::kProduct, EntityClass::kFeature};

std::string_view class_name(EntityClass c);
std::optional<EntityClass> parse_class(std::string_view name);
inline std::size_t class_index(EntityClass c) { return static_cast<std::size_t>(c); }

// A product title with one typed entity, which must occur in the title as a
// run of whole basic tokens.
struct Example {
  std::string title;
  std::string entity;
  EntityClass gold = EntityClass::kBrand;
};

struct RejectedLine {
  std::size_t line = 0;
  std::string reason;
  std::string text;
};

struct Corpus {
  std::vector<Example> examples;
  std::vector<RejectedLine> rejects;
};

// True when the entity's basic tokens occur contiguously in the title's.
bool entity_in_title(std::string_view title, std::string_view entity);

// Reads "entity_type \t entity \t title" lines. A wrong column count is a
// ParseError; other invalid lines are returned in Corpus::rejects.
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path,
                  const std::vector<Example>& examples);
void write_rejects(const std::filesystem::path& path,
                   const std::vector<RejectedLine>& rejects);

struct PairedExample {
  std::string title;
  std::string entity;
  EntityClass hypothesis_class = EntityClass::kBrand;
  bool entailment = false;
};

// One positive pair (gold hypothesis) and one negative pair whose class is
// drawn uniformly from the two other classes.
std::array<PairedExample, 2> make_pairs(const Example& ex, Rng& rng);
std::vector<PairedExample> make_all_pairs(const std::vector<Example>& examples,
                                          Rng& rng);

// Model units of a text: wordpiece pieces, or basic tokens (with whole-word
// ids or [UNK]) for the char front-end.
struct TextUnits {
  std::vector<int> ids;
  std::vector<std::string> tokens;
};
TextUnits text_units(std::string_view text, FrontEnd front_end, const Vocab& vocab);

struct NoHypothesis {};
struct LiteralHypothesis {
  std::string text;
};
struct PromptHypothesis {
  std::size_t length = 0;
};
using HypothesisSlot = std::variant<NoHypothesis, LiteralHypothesis, PromptHypothesis>;

// Lays out "[CLS] title [SEP] entity hypothesis", optionally padded with
// [PAD] to `pad_to` positions. Throws LengthError if the content exceeds
// max_seq.
FormattedInput format_input(std::string_view title, std::string_view entity,
                            const HypothesisSlot& hypothesis, FrontEnd front_end,
                            const Vocab& vocab, std::size_t max_seq,
                            std::size_t pad_to = 0);

// Test examples whose case-folded entity never occurs as a training entity.
std::vector<Example> build_novel_entity_set(const std::vector<Example>& train,
                                            const std::vector<Example>& test);

struct SyntheticSpec {
  std::array<std::size_t, kNumClasses> train_counts = {797, 700, 827};
  std::array<std::size_t, kNumClasses> test_counts = {360, 437, 520};
  // Fraction of the brand and product lexicons held out of training.
  double reserve_fraction = 0.3;
  std::size_t brand_lexicon = 110;    // includes made_up_brands
  std::size_t made_up_brands = 40;    // random-syllable brand names
  std::size_t product_lexicon = 90;
  std::size_t feature_lexicon = 70;
};

struct LexiconEntry {
  std::string text;
  EntityClass cls = EntityClass::kBrand;
  bool reserved = false;
  bool made_up = false;
};

struct GenerationManifest {
  std::uint64_t seed = 0;
  SyntheticSpec spec;
  std::vector<LexiconEntry> lexicon;
  std::size_t reserved_test_examples = 0;
};

struct SyntheticCorpus {
  std::vector<Example> train;
  std::vector<Example> test;
  // Unlabeled titles over the whole lexicon, reserved entries included. They
  // stand in for the general-domain text a pretrained backbone has read.
  std::vector<std::string> background;
  GenerationManifest manifest;
};

// Product titles from brand/product/feature lexicons and title templates.
// Reserved lexicon entries appear only in test; every other test entity is
// also a training entity, so the novel set is exactly the reserved-entity
// test examples.
SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, Rng& rng);
void write_manifest(const std::filesystem::path& path,
                    const GenerationManifest& manifest);

}  // namespace ctm
