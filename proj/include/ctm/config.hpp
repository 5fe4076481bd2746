#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ctm {

// Flat key=value run settings. Every field has a default; a config file
// overrides any subset and unknown keys are rejected.
struct RunConfig {
  // Hyperparameter-table schema.
  std::string model = "ctm";  // entity_typing | textual_entailment | ctm | noprompt
  std::string dataset = "test";  // evaluation split: test | novel | made_up
  std::size_t max_seq = 64;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::size_t epoch = 3;
  double alpha_init = 1.0;
  std::string fusion = "add";  // add | concat | bert-only | char-only
  std::string hypothesis_source = "both";  // label | dictionary | both | handcrafted
  std::uint64_t seed = 1;

  // Encoder.
  std::size_t d = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t char_dim = 16;

  // Vocabulary and pretraining.
  std::size_t vocab_size = 512;
  std::size_t min_freq = 1;
  std::size_t pretrain_epochs = 6;
  double pretrain_learning_rate = 1e-3;
  std::size_t pretrain_batch_size = 16;
  double mask_rate = 0.15;

  // Prompt tuning.
  std::size_t tune_epochs = 4;
  double tune_learning_rate = 1e-2;
  std::size_t tune_batch_size = 16;

  // Synthetic corpus.
  std::size_t train_brand = 797;
  std::size_t train_product = 700;
  std::size_t train_feature = 827;
  std::size_t test_brand = 360;
  std::size_t test_product = 437;
  std::size_t test_feature = 520;
  double reserve_fraction = 0.3;
  std::size_t brand_lexicon = 110;
  std::size_t made_up_brands = 40;
  std::size_t product_lexicon = 90;
  std::size_t feature_lexicon = 70;

  // Comma-separated pipeline variants to train, or "all".
  std::string variants = "all";

  // Applies one setting; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  // Every key with its current value, in declaration order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string resolved() const;
  // Cross-field checks (known enum values, positive sizes).
  void validate() const;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace ctm
