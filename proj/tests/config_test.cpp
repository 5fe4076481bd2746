#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ctm/config.hpp"
#include "ctm/errors.hpp"

namespace ctm {
namespace {

std::string message_of(std::string_view text) {
  try {
    parse_config(text).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, DefaultsAreValid) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.model, "ctm");
  EXPECT_EQ(c.max_seq, 64u);
  EXPECT_EQ(c.alpha_init, 1.0);
  EXPECT_EQ(c.train_brand + c.train_product + c.train_feature, 2324u);
  EXPECT_EQ(c.test_brand + c.test_product + c.test_feature, 1317u);
}

TEST(Config, OverridesSubsetAndSkipsComments) {
  const RunConfig c = parse_config(
      "# desk run\n"
      "\n"
      "fusion = concat   # trailing note\n"
      "learning_rate=0.0005\n"
      "  epoch = 5\n");
  EXPECT_EQ(c.fusion, "concat");
  EXPECT_EQ(c.learning_rate, 5e-4);
  EXPECT_EQ(c.epoch, 5u);
  EXPECT_EQ(c.batch_size, RunConfig{}.batch_size);
}

TEST(Config, UnknownKeyNamesKeyAndLine) {
  const std::string msg = message_of("seed = 3\nbatchsize = 8\n");
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("batchsize"), std::string::npos) << msg;
}

TEST(Config, MalformedLinesAndValuesAreRejected) {
  EXPECT_NE(message_of("epoch 3\n").find("line 1"), std::string::npos);
  EXPECT_NE(message_of("epoch = three\n").find("three"), std::string::npos);
  EXPECT_NE(message_of("epoch = -1\n"), "");
  EXPECT_NE(message_of("learning_rate = 1e-3x\n"), "");
}

TEST(Config, EnumAndRangeValidation) {
  EXPECT_NE(message_of("fusion = multiply\n").find("fusion"), std::string::npos);
  EXPECT_NE(message_of("model = gpt\n"), "");
  EXPECT_NE(message_of("dataset = dev\n"), "");
  EXPECT_NE(message_of("hypothesis_source = both2\n"), "");
  EXPECT_NE(message_of("batch_size = 0\n"), "");
  EXPECT_NE(message_of("mask_rate = 1\n"), "");
  EXPECT_NE(message_of("learning_rate = 0\n"), "");
  EXPECT_EQ(message_of("fusion = bert-only\nhypothesis_source = handcrafted\n"), "");
}

TEST(Config, ResolvedRoundTrips) {
  RunConfig c;
  c.set("seed", "42");
  c.set("fusion", "char-only");
  c.set("tune_learning_rate", "0.003");
  const RunConfig back = parse_config(c.resolved());
  EXPECT_EQ(back.entries(), c.entries());
  EXPECT_EQ(back.seed, 42u);
}

TEST(Config, EntriesCoverEveryKeyOnce) {
  const auto entries = RunConfig{}.entries();
  std::set<std::string> keys;
  for (const auto& [k, v] : entries) EXPECT_TRUE(keys.insert(k).second) << k;
  for (const char* k : {"model", "dataset", "max_seq", "batch_size", "learning_rate", "epoch",
                        "alpha_init", "fusion", "seed"}) {
    EXPECT_TRUE(keys.contains(k)) << k;
  }
}

TEST(Config, LoadFromFile) {
  const auto p = std::filesystem::temp_directory_path() / "ctm_config_test.cfg";
  std::ofstream(p) << "seed = 9\n";
  EXPECT_EQ(load_config(p).seed, 9u);
  std::filesystem::remove(p);
  EXPECT_THROW(load_config(p), ConfigError);
}

}  // namespace
}  // namespace ctm
