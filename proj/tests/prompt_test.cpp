#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ctm/errors.hpp"
#include "ctm/prompt.hpp"
#include "test_fixtures.hpp"

namespace ctm {
namespace {

using testing::small_world;

double distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    s += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
  }
  return std::sqrt(s);
}

TuneConfig quick_config() {
  TuneConfig c;
  c.epochs = 2;
  c.max_seq = 40;
  c.seed = 5;
  return c;
}

TEST(InitPrompt, LabelRowsAreEmbeddingsOfPhrase) {
  const auto& w = small_world();
  for (FrontEnd fe : {FrontEnd::kWordpiece, FrontEnd::kChar}) {
    const Backbone& b = fe == FrontEnd::kWordpiece ? *w.wordpiece : *w.chars;
    const PromptMatrix m = init_prompt(InitKind::kLabels, EntityClass::kBrand, b, w.vocab);
    EXPECT_EQ(m.p(), 3u);
    EXPECT_EQ(m.d(), b.config().d);
    const TextUnits u = text_units("is a brand", fe, w.vocab);
    ASSERT_EQ(u.ids.size(), 3u);
    const Tensor expected = b.text_embeddings(u.ids, u.tokens, {false, false, false});
    for (std::size_t i = 0; i < m.h.numel(); ++i) EXPECT_EQ(m.h.values()[i], expected.values()[i]);
  }
}

TEST(InitPrompt, DictionaryHas14Rows) {
  const auto& w = small_world();
  for (EntityClass c : kAllClasses) {
    const PromptMatrix m = init_prompt(InitKind::kDictionary, c, *w.chars, w.vocab);
    EXPECT_EQ(m.p(), 14u);
  }
  EXPECT_EQ(hypothesis_text(InitKind::kLabels, EntityClass::kProduct), "is a product");
}

TEST(InitPrompt, DeterministicAndIndependentLeaf) {
  const auto& w = small_world();
  const PromptMatrix a = init_prompt(InitKind::kLabels, EntityClass::kFeature, *w.wordpiece, w.vocab);
  const PromptMatrix b = init_prompt(InitKind::kLabels, EntityClass::kFeature, *w.wordpiece, w.vocab);
  EXPECT_EQ(checksum(std::vector<Tensor>{a.h}), checksum(std::vector<Tensor>{b.h}));
  EXPECT_FALSE(a.h.same_storage(w.wordpiece->token_table()));
  EXPECT_FALSE(a.h.requires_grad());
}

TEST(MaskBatch, NeverTouchesClsSepOrPromptSlot) {
  const auto& w = small_world();
  std::vector<FormattedInput> inputs;
  for (const Example& e : w.train_of(EntityClass::kBrand)) {
    inputs.push_back(format_input(e.title, e.entity, PromptHypothesis{3}, FrontEnd::kWordpiece,
                                  w.vocab, 40));
  }
  Rng rng(3);
  TuneConfig cfg;
  double selected = 0.0, expected = 0.0;
  for (int batch = 0; batch < 1000; ++batch) {
    const std::size_t start = (batch * 8) % (inputs.size() - 8);
    const auto masked = mask_batch(std::span(inputs).subspan(start, 8), cfg, w.vocab, rng);
    for (std::size_t i = 0; i < masked.size(); ++i) {
      const SequenceLayout& lay = inputs[start + i].layout;
      for (std::size_t p : masked[i].positions) {
        ASSERT_NE(p, 0u);
        ASSERT_NE(p, lay.sep_index());
        ASSERT_LT(p, lay.hypothesis_begin());
      }
      selected += static_cast<double>(masked[i].positions.size());
      expected += 0.15 * static_cast<double>(lay.n + lay.m);
    }
  }
  EXPECT_NEAR(selected / expected, 1.0, 0.03);
}

TEST(TunePrompt, ZeroEpochsReturnsInitialMatrix) {
  const auto& w = small_world();
  const PromptMatrix init = init_prompt(InitKind::kLabels, EntityClass::kBrand, *w.wordpiece, w.vocab);
  TuneConfig cfg = quick_config();
  cfg.epochs = 0;
  const TuneResult r = tune_prompt(*w.wordpiece, w.train_of(EntityClass::kBrand), init, w.vocab, cfg);
  EXPECT_EQ(distance(r.prompt.h, init.h), 0.0);
}

TEST(TunePrompt, BackboneUnchangedAndPromptMoves) {
  const auto& w = small_world();
  for (FrontEnd fe : {FrontEnd::kWordpiece, FrontEnd::kChar}) {
    const Backbone& b = fe == FrontEnd::kWordpiece ? *w.wordpiece : *w.chars;
    const std::string before = b.checksum();
    const PromptMatrix init = init_prompt(InitKind::kLabels, EntityClass::kProduct, b, w.vocab);
    const TuneResult r = tune_prompt(b, w.train_of(EntityClass::kProduct), init, w.vocab,
                                     quick_config());
    EXPECT_EQ(b.checksum(), before);
    EXPECT_GT(distance(r.prompt.h, init.h), 0.0);
    EXPECT_EQ(r.loss_history.size(), 2u);
    for (const Tensor& t : b.parameters()) EXPECT_FALSE(t.has_grad());
  }
}

TEST(TunePrompt, BackboneWeightsStillInfluenceLoss) {
  const auto& w = small_world();
  Backbone b = w.wordpiece->clone();
  const auto examples = w.train_of(EntityClass::kBrand);
  const PromptMatrix init = init_prompt(InitKind::kLabels, EntityClass::kBrand, b, w.vocab);
  const TuneResult r = tune_prompt(b, examples, init, w.vocab, quick_config());
  const double base = prompt_mlm_loss(b, examples, r.prompt, w.vocab, quick_config(), 11);
  Tensor t = b.position_table();
  t.mutable_values()[5] += 1e-3;
  const double moved = prompt_mlm_loss(b, examples, r.prompt, w.vocab, quick_config(), 11);
  EXPECT_NE(base, moved);
  EXPECT_FALSE(t.has_grad());
}

TEST(TunePrompt, OtherClassPromptUntouched) {
  const auto& w = small_world();
  const PromptMatrix a = init_prompt(InitKind::kLabels, EntityClass::kBrand, *w.wordpiece, w.vocab);
  const PromptMatrix b = init_prompt(InitKind::kLabels, EntityClass::kFeature, *w.wordpiece, w.vocab);
  const std::string before = checksum(std::vector<Tensor>{b.h});
  const std::string a_before = checksum(std::vector<Tensor>{a.h});
  tune_prompt(*w.wordpiece, w.train_of(EntityClass::kBrand), a, w.vocab, quick_config());
  EXPECT_EQ(checksum(std::vector<Tensor>{b.h}), before);
  EXPECT_EQ(checksum(std::vector<Tensor>{a.h}), a_before);
}

TEST(TunePrompt, DeterministicPerSeed) {
  const auto& w = small_world();
  const PromptMatrix init = init_prompt(InitKind::kDictionary, EntityClass::kFeature, *w.chars, w.vocab);
  const auto examples = w.train_of(EntityClass::kFeature);
  TuneConfig cfg = quick_config();
  cfg.epochs = 1;
  const TuneResult x = tune_prompt(*w.chars, examples, init, w.vocab, cfg);
  const TuneResult y = tune_prompt(*w.chars, examples, init, w.vocab, cfg);
  EXPECT_EQ(checksum(std::vector<Tensor>{x.prompt.h}), checksum(std::vector<Tensor>{y.prompt.h}));
}

TEST(TunePrompt, Preconditions) {
  const auto& w = small_world();
  const PromptMatrix init = init_prompt(InitKind::kLabels, EntityClass::kBrand, *w.wordpiece, w.vocab);
  EXPECT_THROW(tune_prompt(*w.wordpiece, {}, init, w.vocab, quick_config()), ConfigError);
  EXPECT_THROW(tune_prompt(*w.wordpiece, w.train_of(EntityClass::kProduct), init, w.vocab,
                           quick_config()),
               ContractError);
  EXPECT_THROW(tune_prompt(*w.chars, w.train_of(EntityClass::kBrand), init, w.vocab,
                           quick_config()),
               ContractError);
  Backbone live = w.wordpiece->clone();
  live.set_requires_grad(true);
  EXPECT_THROW(tune_prompt(live, w.train_of(EntityClass::kBrand), init, w.vocab, quick_config()),
               ContractError);
  TuneConfig bad = quick_config();
  bad.masking.rate = 0.0;
  EXPECT_THROW(tune_prompt(*w.wordpiece, w.train_of(EntityClass::kBrand), init, w.vocab, bad),
               ConfigError);
}

TEST(PromptCheckpoint, RoundTrip) {
  const auto& w = small_world();
  const PromptMatrix m = init_prompt(InitKind::kDictionary, EntityClass::kProduct, *w.chars, w.vocab);
  const auto path = std::filesystem::temp_directory_path() / "ctm_prompt_test.ctm";
  save_prompt(path, m);
  const PromptMatrix back = load_prompt(path);
  EXPECT_EQ(back.cls, m.cls);
  EXPECT_EQ(back.backbone, m.backbone);
  EXPECT_EQ(back.init, m.init);
  EXPECT_EQ(distance(back.h, m.h), 0.0);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace ctm
