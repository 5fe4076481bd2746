#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ctm/data.hpp"
#include "ctm/encoder.hpp"
#include "ctm/errors.hpp"
#include "ctm/ops.hpp"
#include "gradcheck.hpp"

namespace ctm {
namespace {

using testing::random_tensor;
using testing::tiny_encoder;
using testing::tiny_vocab;

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a.values()[i] != b.values()[i]) return false;
  }
  return true;
}

Tensor rows_of(const Tensor& x, std::size_t begin, std::size_t count) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
  return ops::row_select(x, idx);
}

TEST(EncoderConfig, DefaultCharChannelsSumToD) {
  EncoderConfig c;
  c.vocab_size = 100;
  EXPECT_EQ(c.char_channels(), (std::vector<std::size_t>{13, 13, 13, 13, 12}));
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Embedding, PadAtPositionZero) {
  Rng rng(1);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  const std::vector<int> ids = {kPadId};
  Tensor out = b.embed_wordpiece(ids);
  for (std::size_t c = 0; c < b.config().d; ++c) {
    EXPECT_EQ(out.at(0, c), b.token_table().at(kPadId, c) + b.position_table().at(0, c));
  }
}

TEST(Embedding, PermutingTokensChangesRows) {
  Rng rng(2);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  const std::vector<int> ab = {7, 8}, ba = {8, 7};
  Tensor x = b.embed_wordpiece(ab), y = b.embed_wordpiece(ba);
  EXPECT_FALSE(bit_equal(rows_of(x, 0, 1), rows_of(y, 1, 1)));
}

TEST(Embedding, TitleAndEntityRowsGiveNPlusMByD) {
  Rng rng(3);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  const auto x = tokenize_wordpiece("nike hoodie black", v);
  const auto e = tokenize_wordpiece("hoodie", v);
  std::vector<int> ids = x.ids;
  ids.insert(ids.end(), e.ids.begin(), e.ids.end());
  Tensor out = b.embed_wordpiece(ids);
  EXPECT_EQ(out.shape(), (Shape{x.ids.size() + e.ids.size(), b.config().d}));
}

TEST(Embedding, OverlongSequenceIsLengthError) {
  Rng rng(4);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  const std::vector<int> ids(b.config().max_seq + 1, 5);
  EXPECT_THROW(b.embed_wordpiece(ids), LengthError);
}

TEST(CharCnn, SameTokenSameVectorAtAnyPosition) {
  Rng rng(5);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kChar, tiny_encoder(v.size()), rng);
  const std::vector<int> ids = {kUnkId, kUnkId, kUnkId};
  const std::vector<std::string> tokens = {"hoodie", "nike", "hoodie"};
  Tensor out = b.text_embeddings(ids, tokens, {false, false, false});
  EXPECT_EQ(out.shape(), (Shape{3, b.config().d}));
  EXPECT_TRUE(bit_equal(rows_of(out, 0, 1), rows_of(out, 2, 1)));
}

TEST(CharCnn, OneCharacterDifferenceChangesOutput) {
  Rng rng(6);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kChar, tiny_encoder(v.size()), rng);
  const std::vector<CharRow> rows = {encode_chars("Fashern"), encode_chars("Fashorn")};
  Tensor out = b.embed_chars(rows);
  Tensor pos = rows_of(b.position_table(), 0, 2);
  Tensor pre = ops::sub(out, pos);
  EXPECT_FALSE(bit_equal(rows_of(pre, 0, 1), rows_of(pre, 1, 1)));
}

TEST(CharCnn, ReservedTokensUseDedicatedVectors) {
  Rng rng(7);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kChar, tiny_encoder(v.size()), rng);
  const std::vector<int> ids = {kClsId, kSepId, kClsId};
  const std::vector<std::string> tokens = {"[CLS]", "[SEP]", "[CLS]"};
  Tensor out = b.text_embeddings(ids, tokens, {true, true, true});
  EXPECT_TRUE(bit_equal(rows_of(out, 0, 1), rows_of(out, 2, 1)));
  EXPECT_FALSE(bit_equal(rows_of(out, 0, 1), rows_of(out, 1, 1)));
}

TEST(FrontEnds, IdenticalSequencesGiveIdenticalShapes) {
  Rng rng(8);
  const Vocab v = tiny_vocab();
  Backbone wp = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  Backbone ch = Backbone::init(FrontEnd::kChar, tiny_encoder(v.size()), rng);
  const auto a = format_input("nike hoodie black", "hoodie", LiteralHypothesis{"is a product"},
                              FrontEnd::kWordpiece, v, 24);
  const auto c = format_input("nike hoodie black", "hoodie", LiteralHypothesis{"is a product"},
                              FrontEnd::kChar, v, 24);
  ASSERT_EQ(a.length(), c.length());
  EXPECT_EQ(wp.input_embeddings(a, nullptr).shape(), ch.input_embeddings(c, nullptr).shape());
}

TEST(Encode, ZeroLayersIsIdentity) {
  Rng rng(9);
  const Vocab v = tiny_vocab();
  EncoderConfig cfg = tiny_encoder(v.size());
  cfg.layers = 0;
  Backbone b = Backbone::init(FrontEnd::kWordpiece, cfg, rng);
  Tensor x = random_tensor({4, cfg.d}, rng);
  EXPECT_TRUE(bit_equal(b.encode(x, {true, true, true, true}), x));
}

TEST(Encode, PaddingRowsDoNotAffectOthers) {
  Rng rng(10);
  const Vocab v = tiny_vocab();
  EncoderConfig cfg = tiny_encoder(v.size());
  cfg.layers = 2;
  Backbone b = Backbone::init(FrontEnd::kWordpiece, cfg, rng);
  const std::vector<bool> mask = {true, true, true, false, false};
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({5, cfg.d}, rng);
    Tensor y = x.clone();
    for (std::size_t r = 3; r < 5; ++r) {
      for (std::size_t c = 0; c < cfg.d; ++c) y.mutable_values()[r * cfg.d + c] = rng.normal(0, 50);
    }
    EXPECT_TRUE(bit_equal(rows_of(b.encode(x, mask), 0, 3), rows_of(b.encode(y, mask), 0, 3)));
  }
}

TEST(Encode, AttentionRowsSumToOneOverUnmasked) {
  Rng rng(11);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  const std::vector<bool> mask = {true, true, false, true};
  Tensor x = random_tensor({4, b.config().d}, rng);
  for (std::size_t h = 0; h < b.config().heads; ++h) {
    Tensor p = b.attention_probs(x, mask, 0, h);
    for (std::size_t r : {0u, 1u, 3u}) {
      EXPECT_NEAR(p.at(r, 0) + p.at(r, 1) + p.at(r, 3), 1.0, 1e-12);
      EXPECT_EQ(p.at(r, 2), 0.0);
    }
  }
}

TEST(Encode, MaskLengthMismatchIsContractError) {
  Rng rng(12);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  EXPECT_THROW(b.encode(random_tensor({3, b.config().d}, rng), {true, true}), ContractError);
}

TEST(Encode, PermutationEquivariantWithoutPositions) {
  Rng rng(13);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  for (double& p : b.mutable_position_table().mutable_values()) p = 0.0;
  const std::vector<int> ids = {5, 9, 12, 7};
  const std::vector<int> perm_ids = {12, 5, 7, 9};  // positions 2, 0, 3, 1
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  const std::vector<bool> mask(4, true);
  Tensor a = b.encode(b.embed_wordpiece(ids), mask);
  Tensor c = b.encode(b.embed_wordpiece(perm_ids), mask);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < b.config().d; ++k) {
      EXPECT_NEAR(c.at(i, k), a.at(perm[i], k), 1e-12);
    }
  }
}

TEST(Mlm, LogitsWidthIsVocabSize) {
  Rng rng(14);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  Tensor s = random_tensor({3, b.config().d}, rng);
  const std::vector<std::size_t> pos = {0, 2};
  EXPECT_EQ(b.mlm_logits(s, pos).shape(), (Shape{2, v.size()}));
  const std::vector<std::size_t> bad = {3};
  EXPECT_THROW(b.mlm_logits(s, bad), IndexError);
}

TEST(Mlm, TiedHeadSharesStorage) {
  Rng rng(15);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  EXPECT_TRUE(b.mlm_output().same_storage(b.token_table()));
  Backbone c = Backbone::init(FrontEnd::kChar, tiny_encoder(v.size()), rng);
  EXPECT_EQ(c.mlm_output().rows(), v.size());
}

TEST(Mlm, OrthonormalTableRecoversToken) {
  Rng rng(16);
  std::vector<std::string> tokens(kReservedTokens.begin(), kReservedTokens.end());
  for (const char* t : {"a", "b", "c", "d", "e"}) tokens.push_back(t);
  const Vocab v = Vocab::from_tokens(tokens);
  EncoderConfig cfg = tiny_encoder(v.size());
  cfg.d = 16;
  Backbone b = Backbone::init(FrontEnd::kWordpiece, cfg, rng);
  Tensor table = b.token_table();
  for (std::size_t r = 0; r < v.size(); ++r) {
    for (std::size_t c = 0; c < cfg.d; ++c) table.mutable_values()[r * cfg.d + c] = r == c ? 1.0 : 0.0;
  }
  for (std::size_t k = 0; k < v.size(); ++k) {
    const std::vector<int> id = {static_cast<int>(k)};
    Tensor state = ops::embedding_lookup(table, id);
    const std::vector<std::size_t> pos = {0};
    Tensor logits = b.mlm_logits(state, pos);
    std::size_t best = 0;
    for (std::size_t j = 1; j < v.size(); ++j) {
      if (logits.at(0, j) > logits.at(0, best)) best = j;
    }
    EXPECT_EQ(best, k);
  }
}

TEST(Mlm, PromptRowReceivesGradient) {
  Rng rng(17);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  const auto in = format_input("nike hoodie black", "hoodie", PromptHypothesis{3},
                               FrontEnd::kWordpiece, v, 24);
  MaskedInput m;
  m.input = in;
  m.positions = {2};
  m.targets = {in.ids[2]};
  m.input.ids[2] = kMaskId;
  m.input.tokens[2] = "[MASK]";
  Tensor h = random_tensor({3, b.config().d}, rng, 0.1);
  auto loss = [&] { return mlm_loss(b, m, &h); };
  const auto r = testing::check_gradients(loss, {h}, rng);
  EXPECT_TRUE(r.ok()) << r.first_failure;
  h.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(loss());
  double norm = 0.0;
  for (double g : h.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(Mlm, UnmaskedInputHasZeroLoss) {
  Rng rng(18);
  const Vocab v = tiny_vocab();
  Backbone b = Backbone::init(FrontEnd::kWordpiece, tiny_encoder(v.size()), rng);
  MaskedInput m;
  m.input = format_input("nike hoodie", "", NoHypothesis{}, FrontEnd::kWordpiece, v, 24);
  EXPECT_EQ(mlm_loss(b, m).item(), 0.0);
}

TEST(Masking, OnlyEligiblePositionsAndSplit) {
  Rng rng(19);
  const Vocab v = tiny_vocab();
  const auto in = format_input("nike hoodie black", "hoodie", NoHypothesis{},
                               FrontEnd::kWordpiece, v, 24);
  const auto eligible = text_positions(in);
  std::size_t selected = 0, masked = 0, kept = 0;
  MaskingRecipe recipe;
  for (int trial = 0; trial < 4000; ++trial) {
    const MaskedInput m = mask_input(in, eligible, recipe, v, rng);
    for (std::size_t i = 0; i < m.positions.size(); ++i) {
      const std::size_t p = m.positions[i];
      ASSERT_FALSE(in.reserved[p]);
      ASSERT_EQ(m.targets[i], in.ids[p]);
      ++selected;
      if (m.input.ids[p] == kMaskId) ++masked;
      else if (m.input.ids[p] == in.ids[p]) ++kept;
    }
  }
  const double expected = 4000.0 * 0.15 * static_cast<double>(eligible.size());
  EXPECT_NEAR(static_cast<double>(selected), expected, 4.0 * std::sqrt(expected));
  EXPECT_NEAR(static_cast<double>(masked) / static_cast<double>(selected), 0.8, 0.03);
  EXPECT_GE(static_cast<double>(kept) / static_cast<double>(selected), 0.1 - 0.03);
}

class PretrainTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(20);
    SyntheticSpec spec;
    spec.train_counts = {60, 60, 60};
    spec.test_counts = {5, 5, 5};
    const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
    std::vector<std::string> titles;
    for (const Example& e : corpus.train) titles.push_back(e.title);
    vocab = Vocab::build(titles, 256, 1);
    for (const std::string& t : titles) {
      inputs.push_back(format_input(t, "", NoHypothesis{}, FrontEnd::kWordpiece, vocab, 32));
    }
  }
  Vocab vocab = Vocab::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"});
  std::vector<FormattedInput> inputs;
};

TEST_F(PretrainTest, InitialLossNearLogVocab) {
  Rng rng(21);
  EncoderConfig cfg = tiny_encoder(vocab.size());
  cfg.max_seq = 32;
  Backbone b = Backbone::init(FrontEnd::kWordpiece, cfg, rng);
  PretrainConfig pc;
  pc.epochs = 0;
  pc.probe_size = 128;
  const auto r = pretrain_mlm(b, inputs, vocab, pc, rng);
  ASSERT_EQ(r.loss_history.size(), 1u);
  const double expected = std::log(static_cast<double>(vocab.size()));
  EXPECT_NEAR(r.loss_history[0], expected, 0.1 * expected);
}

TEST_F(PretrainTest, LossDecreasesOverFirstThreeEpochs) {
  Rng rng(22);
  EncoderConfig cfg = tiny_encoder(vocab.size());
  cfg.d = 16;
  cfg.max_seq = 32;
  Backbone b = Backbone::init(FrontEnd::kWordpiece, cfg, rng);
  PretrainConfig pc;
  pc.epochs = 3;
  pc.learning_rate = 3e-3;
  const auto r = pretrain_mlm(b, inputs, vocab, pc, rng);
  ASSERT_EQ(r.loss_history.size(), 4u);
  for (std::size_t e = 1; e < 4; ++e) EXPECT_LT(r.loss_history[e], r.loss_history[e - 1]);
}

TEST_F(PretrainTest, FrozenBackboneHasFlatHistory) {
  Rng rng(23);
  EncoderConfig cfg = tiny_encoder(vocab.size());
  cfg.max_seq = 32;
  Backbone b = Backbone::init(FrontEnd::kWordpiece, cfg, rng);
  const std::string before = b.checksum();
  PretrainConfig pc;
  pc.epochs = 2;
  pc.freeze_all = true;
  const auto r = pretrain_mlm(b, inputs, vocab, pc, rng);
  for (double l : r.loss_history) EXPECT_EQ(l, r.loss_history[0]);
  EXPECT_EQ(b.checksum(), before);
}

TEST_F(PretrainTest, EmptyCorpusIsConfigError) {
  Rng rng(24);
  EncoderConfig cfg = tiny_encoder(vocab.size());
  Backbone b = Backbone::init(FrontEnd::kWordpiece, cfg, rng);
  EXPECT_THROW(pretrain_mlm(b, {}, vocab, PretrainConfig{}, rng), ConfigError);
}

TEST(Checkpoint, BackboneRoundTripIsExact) {
  Rng rng(25);
  const Vocab v = tiny_vocab();
  for (FrontEnd fe : {FrontEnd::kWordpiece, FrontEnd::kChar}) {
    Backbone b = Backbone::init(fe, tiny_encoder(v.size()), rng);
    const auto path = std::filesystem::temp_directory_path() / "ctm_backbone_test.ctm";
    b.save(path);
    Backbone c = Backbone::load(path);
    EXPECT_EQ(c.checksum(), b.checksum());
    EXPECT_EQ(c.front_end(), fe);
    if (fe == FrontEnd::kWordpiece) EXPECT_TRUE(c.mlm_output().same_storage(c.token_table()));
    std::filesystem::remove(path);
  }
}

TEST(Forward, FiniteOnFiniteInputs) {
  Rng rng(26);
  const Vocab v = tiny_vocab();
  for (FrontEnd fe : {FrontEnd::kWordpiece, FrontEnd::kChar}) {
    Backbone b = Backbone::init(fe, tiny_encoder(v.size()), rng);
    const auto in = format_input("zebra gel pen 0.7 mm", "gel pen", NoHypothesis{}, fe, v, 24);
    Tensor s = b.encode(b.input_embeddings(in, nullptr), in.attention_mask());
    for (double x : s.values()) ASSERT_TRUE(std::isfinite(x));
  }
}

}  // namespace
}  // namespace ctm
