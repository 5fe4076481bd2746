#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctm/checkpoint.hpp"
#include "ctm/rng.hpp"
#include "ctm/sequence.hpp"
#include "ctm/tensor.hpp"
#include "ctm/tokenize.hpp"

namespace ctm {

struct EncoderConfig {
  std::size_t d = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t max_seq = 64;
  std::size_t vocab_size = 0;
  std::size_t char_alphabet_size = kCharAlphabetSize;
  std::size_t char_dim = 16;
  std::size_t min_filter_width = 1;
  std::size_t max_filter_width = 5;

  void validate() const;
  // Convolution channels per filter width; they sum to d.
  std::vector<std::size_t> char_channels() const;
};

// A small pre-LayerNorm transformer encoder behind one of two embedding
// front-ends. The wordpiece front-end looks tokens up in a table that is
// also the (tied) MLM output projection. The char front-end runs a
// character CNN (widths 1..5, max-pool, two highway layers, projection to
// d) per word; reserved tokens use dedicated vectors instead of the CNN, and
// MLM predicts whole-word vocabulary ids through a separate output table.
class Backbone {
 public:
  static Backbone init(FrontEnd front_end, const EncoderConfig& config, Rng& rng);

  FrontEnd front_end() const { return front_end_; }
  const EncoderConfig& config() const { return config_; }

  // Front-end rows (no position term) for each unit of `input`. Prompt
  // placeholders get the [PAD] row.
  Tensor unit_embeddings(const FormattedInput& input) const;
  // Front-end rows for arbitrary units; reserved[i] selects the dedicated
  // vector of ids[i] instead of the word path (char front-end only).
  Tensor text_embeddings(std::span<const int> ids,
                         std::span<const std::string> tokens,
                         const std::vector<bool>& reserved) const;

  Tensor embed_wordpiece(std::span<const int> ids) const;
  Tensor embed_chars(std::span<const CharRow> rows) const;
  Tensor add_positions(const Tensor& x) const;

  // [X_e; H] plus position embeddings. When `prompt` is given its rows
  // replace the hypothesis placeholders of `input`.
  Tensor input_embeddings(const FormattedInput& input, const Tensor* prompt) const;

  // Runs the transformer stack. mask[i] == false marks padding rows, which
  // neither attend nor are attended to.
  Tensor encode(const Tensor& x, const std::vector<bool>& mask) const;
  // Attention probabilities of one layer/head, for inspection and tests.
  Tensor attention_probs(const Tensor& x, const std::vector<bool>& mask,
                         std::size_t layer, std::size_t head) const;

  // Final-LayerNorm'd state of position 0 (1 x d).
  Tensor cls_vector(const Tensor& states) const;
  // P x vocab_size logits for the given positions.
  Tensor mlm_logits(const Tensor& states, std::span<const std::size_t> positions) const;

  // Every parameter once (the tied table appears a single time).
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  // Parameters that a classifier on top of cls_vector() touches.
  std::vector<Tensor> encoder_parameters() const;
  std::vector<Tensor> parameters() const;
  void set_requires_grad(bool on);
  std::string checksum() const;

  const Tensor& token_table() const { return token_table_; }
  const Tensor& mlm_output() const { return mlm_output_; }
  const Tensor& position_table() const { return position_table_; }
  Tensor& mutable_position_table() { return position_table_; }

  NamedArrays to_arrays() const;
  static Backbone from_arrays(const NamedArrays& arrays);
  void save(const std::filesystem::path& path) const;
  static Backbone load(const std::filesystem::path& path);

  Backbone clone() const;

 private:
  struct Layer {
    Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Highway {
    Tensor wh, bh, wg, bg;
  };

  Tensor char_word_vectors(std::span<const CharRow> rows) const;
  Tensor attention(const Layer& layer, const Tensor& h, const std::vector<bool>& mask,
                   std::vector<Tensor>* probs) const;
  void for_each_parameter(
      const std::function<void(const std::string&, const Tensor&)>& fn) const;

  FrontEnd front_end_ = FrontEnd::kWordpiece;
  EncoderConfig config_;
  // Wordpiece front-end.
  Tensor token_table_;
  // Char front-end.
  Tensor char_table_;
  std::vector<Tensor> conv_filters_;
  std::vector<Tensor> conv_biases_;
  std::vector<Highway> highway_;
  Tensor proj_w_, proj_b_;
  Tensor special_table_;
  // Shared.
  Tensor position_table_;
  std::vector<Layer> layers_;
  Tensor final_ln_g_, final_ln_b_;
  Tensor mlm_output_;  // same storage as token_table_ for wordpiece
  Tensor mlm_bias_;
};

struct MaskingRecipe {
  double rate = 0.15;
  double replace = 0.8;  // -> [MASK]
  double keep = 0.1;     // -> unchanged
  double random = 0.1;   // -> random vocabulary token
  void validate() const;
};

struct MaskedInput {
  FormattedInput input;
  std::vector<std::size_t> positions;
  std::vector<int> targets;
};

// Selects each eligible position independently with probability
// recipe.rate and corrupts it per the replace/keep/random split.
MaskedInput mask_input(const FormattedInput& input,
                       std::span<const std::size_t> eligible,
                       const MaskingRecipe& recipe, const Vocab& vocab, Rng& rng);
// Positions holding text (not reserved tokens or prompt placeholders).
std::vector<std::size_t> text_positions(const FormattedInput& input);

// Mean cross-entropy over the masked positions; an unmasked input gives a
// constant zero.
Tensor mlm_loss(const Backbone& backbone, const MaskedInput& masked,
                const Tensor* prompt = nullptr);

struct PretrainConfig {
  std::size_t epochs = 6;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  MaskingRecipe masking;
  std::size_t probe_size = 256;
  bool freeze_all = false;
};

struct PretrainResult {
  // Probe-set MLM loss before training and after every epoch; the probe
  // masks are drawn once, so a frozen backbone gives a flat history.
  std::vector<double> loss_history;
  std::vector<double> train_loss;  // mean batch loss per epoch
};

PretrainResult pretrain_mlm(Backbone& backbone,
                            const std::vector<FormattedInput>& corpus,
                            const Vocab& vocab, const PretrainConfig& config,
                            Rng& rng);

}  // namespace ctm
