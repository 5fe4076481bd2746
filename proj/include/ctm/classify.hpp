#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctm/data.hpp"
#include "ctm/encoder.hpp"
#include "ctm/prompt.hpp"
#include "ctm/rng.hpp"
#include "ctm/tensor.hpp"
#include "ctm/tokenize.hpp"

namespace ctm {

enum class FusionMode { kAdd, kConcat, kBertOnly, kCharOnly };

std::string_view fusion_name(FusionMode mode);
FusionMode parse_fusion(std::string_view name);
bool uses_wordpiece(FusionMode mode);
bool uses_char(FusionMode mode);
// Width of the fused vector for backbones of width d.
std::size_t fusion_width(FusionMode mode, std::size_t d);

// concat: [v_bert, alpha * v_char]; add: v_bert + alpha * v_char; the single
// backbone modes return their one vector. Missing or mismatched inputs throw
// ContractError.
Tensor fuse(const Tensor* v_bert, const Tensor* v_char, const Tensor& alpha,
            FusionMode mode);

// in -> 100 -> 50 -> out with ReLU between layers.
class MlpHead {
 public:
  static constexpr std::size_t kHidden1 = 100;
  static constexpr std::size_t kHidden2 = 50;

  MlpHead() = default;
  static MlpHead init(std::size_t in, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::size_t in_width() const { return w1_.rows(); }
  std::size_t out_width() const { return w3_.cols(); }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  static MlpHead from_parameters(const std::vector<std::pair<std::string, Tensor>>& named);

 private:
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

// The hypothesis each class is paired with on one backbone: literal text
// tokens, or prompt rows injected into the hypothesis slot.
struct HypothesisSet {
  enum class Kind { kLiteral, kPrompt };
  Kind kind = Kind::kLiteral;
  std::array<std::string, kNumClasses> literal;
  std::array<std::optional<PromptMatrix>, kNumClasses> prompts;

  static HypothesisSet literal_text(InitKind source);
  static HypothesisSet from_prompts(std::vector<PromptMatrix> prompts);
};

// Index of the entailment output of the binary head.
inline constexpr std::size_t kEntailmentIndex = 0;

struct EntailmentModel {
  FusionMode mode = FusionMode::kAdd;
  std::optional<Backbone> wordpiece;
  std::optional<Backbone> chars;
  HypothesisSet wordpiece_hypotheses;
  HypothesisSet char_hypotheses;
  Tensor alpha;
  MlpHead head;
  std::size_t max_seq = 64;

  // Fails with ContractError when the parts do not fit the mode.
  void validate() const;
  // Backbone encoder weights, head and (in fused modes) alpha.
  std::vector<Tensor> trainable_parameters() const;
  // Every prompt matrix the model holds.
  std::vector<Tensor> prompt_tensors() const;
};

// Builds a model around copies of the given backbones. Backbones for
// modes that do not use them may be null.
EntailmentModel make_entailment_model(FusionMode mode, const Backbone* wordpiece,
                                      const Backbone* chars, HypothesisSet wordpiece_hyp,
                                      HypothesisSet char_hyp, double alpha_init,
                                      std::size_t max_seq, Rng& rng);

// 1 x 2 logits for "title / entity is <cls>".
Tensor entailment_logits(const EntailmentModel& model, const Vocab& vocab,
                         std::string_view title, std::string_view entity, EntityClass cls);
// Entailment probability (softmax over the two logits).
double entailment_probability(const EntailmentModel& model, const Vocab& vocab,
                              std::string_view title, std::string_view entity,
                              EntityClass cls);
// First maximum wins, so ties go to the earlier class in kAllClasses.
EntityClass select_class(const std::array<double, kNumClasses>& scores);

struct ClassPrediction {
  EntityClass cls = EntityClass::kBrand;
  std::array<double, kNumClasses> probabilities{};
};
ClassPrediction predict_class(const EntailmentModel& model, const Vocab& vocab,
                              std::string_view title, std::string_view entity);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 3;
  std::uint64_t seed = 1;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
};

// Binary cross-entropy fine-tuning over entailment pairs. Prompt matrices stay
// frozen and are checked unchanged afterwards (InvariantError otherwise).
TrainHistory train_step2(EntailmentModel& model, const Vocab& vocab,
                         const std::vector<PairedExample>& pairs, const TrainConfig& config);

// Three-way classifier on the [CLS] vector of "[CLS] title [SEP] entity".
struct BaselineModel {
  std::optional<Backbone> wordpiece;
  MlpHead head;
  std::size_t max_seq = 64;
};

BaselineModel make_baseline_model(const Backbone& wordpiece, std::size_t max_seq, Rng& rng);
Tensor baseline_logits(const BaselineModel& model, const Vocab& vocab,
                       std::string_view title, std::string_view entity);
TrainHistory train_baseline(BaselineModel& model, const Vocab& vocab,
                            const std::vector<Example>& examples, const TrainConfig& config);
EntityClass predict_baseline(const BaselineModel& model, const Vocab& vocab,
                             std::string_view title, std::string_view entity);

// Self-contained checkpoints. `prompt_refs` records where the prompt matrices
// were loaded from; the matrices themselves are stored as well.
void save_entailment_model(const std::filesystem::path& path, const EntailmentModel& model,
                           const std::vector<std::string>& prompt_refs = {});
EntailmentModel load_entailment_model(const std::filesystem::path& path);
void save_baseline_model(const std::filesystem::path& path, const BaselineModel& model);
BaselineModel load_baseline_model(const std::filesystem::path& path);

}  // namespace ctm
