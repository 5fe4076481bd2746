#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ctm/data.hpp"
#include "ctm/encoder.hpp"
#include "ctm/tensor.hpp"
#include "ctm/tokenize.hpp"

namespace ctm {

enum class InitKind { kLabels, kDictionary };

std::string_view init_kind_name(InitKind kind);
InitKind parse_init_kind(std::string_view name);
// Prompt length for an init kind: 3 for labels, 14 for dictionary.
std::size_t prompt_length(InitKind kind);
// The hypothesis phrase an init kind starts from, e.g. "is a brand".
std::string hypothesis_text(InitKind kind, EntityClass cls);

// A continuous hypothesis for one (class, backbone) pair: p x d rows that
// take the place of hypothesis tokens.
struct PromptMatrix {
  EntityClass cls = EntityClass::kBrand;
  FrontEnd backbone = FrontEnd::kWordpiece;
  InitKind init = InitKind::kLabels;
  Tensor h;

  std::size_t p() const { return h.rows(); }
  std::size_t d() const { return h.cols(); }
};

// Rows are the backbone's front-end embeddings of the hypothesis phrase,
// truncated or padded with the [PAD] embedding to prompt_length(kind).
PromptMatrix init_prompt(InitKind kind, EntityClass cls, const Backbone& backbone,
                         const Vocab& vocab);

struct TuneConfig {
  MaskingRecipe masking;
  double learning_rate = 1e-2;
  std::size_t epochs = 4;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  std::size_t max_seq = 64;

  void validate() const;
};

// Title and entity positions of a prompt-formatted input; never [CLS],
// [SEP] or the prompt slot.
std::vector<std::size_t> maskable_positions(const FormattedInput& input);
std::vector<MaskedInput> mask_batch(std::span<const FormattedInput> inputs,
                                    const TuneConfig& config, const Vocab& vocab,
                                    Rng& rng);

struct TuneResult {
  PromptMatrix prompt;
  std::vector<double> loss_history;  // mean batch loss per epoch
};

// Learns H on all examples of one class through the MLM objective while the
// backbone stays frozen. Throws ConfigError on empty input, ContractError if
// the backbone is not frozen and InvariantError if a backbone parameter
// receives a gradient or changes.
TuneResult tune_prompt(const Backbone& backbone, const std::vector<Example>& class_examples,
                       const PromptMatrix& init, const Vocab& vocab,
                       const TuneConfig& config);

// Mean MLM loss of `prompt` over `examples` with masks drawn from `seed`;
// equal seeds give equal masks, so two prompts can be compared directly.
double prompt_mlm_loss(const Backbone& backbone, const std::vector<Example>& examples,
                       const PromptMatrix& prompt, const Vocab& vocab,
                       const TuneConfig& config, std::uint64_t seed);

NamedArrays prompt_to_arrays(const PromptMatrix& prompt);
PromptMatrix prompt_from_arrays(const NamedArrays& arrays);
void save_prompt(const std::filesystem::path& path, const PromptMatrix& prompt);
PromptMatrix load_prompt(const std::filesystem::path& path);

}  // namespace ctm
