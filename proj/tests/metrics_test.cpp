#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "json.hpp"

#include "ctm/errors.hpp"
#include "ctm/metrics.hpp"
#include "ctm/rng.hpp"

namespace ctm {
namespace {

constexpr EntityClass B = EntityClass::kBrand;
constexpr EntityClass P = EntityClass::kProduct;
constexpr EntityClass F = EntityClass::kFeature;

// Counts from scratch and uses the 2TP / (2TP + FP + FN) form of F1.
double oracle_f1(const std::vector<EntityClass>& gold, const std::vector<EntityClass>& pred,
                 EntityClass c) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (pred[i] == c && gold[i] == c) ++tp;
    if (pred[i] == c && gold[i] != c) ++fp;
    if (pred[i] != c && gold[i] == c) ++fn;
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

std::vector<EntityClass> random_labels(std::size_t n, Rng& rng) {
  std::vector<EntityClass> v(n);
  for (EntityClass& c : v) c = kAllClasses[rng.index(kNumClasses)];
  return v;
}

TEST(PerClassF1, PerfectPredictionScoresOne) {
  const std::vector<EntityClass> gold = {B, P, F, F, P};
  const MetricsReport r = per_class_f1(gold, gold);
  for (const ClassMetrics& c : r.classes) EXPECT_EQ(c.f1, 1.0);
  EXPECT_EQ(r.average_f1, 1.0);
  EXPECT_EQ(r.weighted_f1, 1.0);
}

TEST(PerClassF1, WorkedExample) {
  const MetricsReport r = per_class_f1({B, B, P, F}, {B, P, P, F});
  EXPECT_NEAR(r.classes[0].f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.classes[1].f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.classes[2].f1, 1.0, 1e-12);
  EXPECT_NEAR(r.average_f1, 7.0 / 9.0, 1e-12);
  EXPECT_EQ(r.classes[0].support, 2u);
  EXPECT_EQ(r.classes[0].precision, 1.0);
  EXPECT_EQ(r.classes[0].recall, 0.5);
}

TEST(PerClassF1, AbsentClassIsFlaggedDegenerate) {
  const MetricsReport r = per_class_f1({B, B, P}, {B, B, P});
  EXPECT_TRUE(r.classes[2].degenerate);
  EXPECT_EQ(r.classes[2].f1, 0.0);
  EXPECT_FALSE(r.classes[0].degenerate);
}

TEST(PerClassF1, MatchesBruteForceOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.index(50);
    const auto gold = random_labels(n, rng);
    const auto pred = random_labels(n, rng);
    const MetricsReport r = per_class_f1(gold, pred);
    double sum = 0.0;
    for (EntityClass c : kAllClasses) {
      const double expected = oracle_f1(gold, pred, c);
      ASSERT_NEAR(r.classes[class_index(c)].f1, expected, 1e-12);
      sum += expected;
    }
    ASSERT_NEAR(r.average_f1, sum / 3.0, 1e-12);
  }
}

TEST(PerClassF1, InvariantToJointPermutation) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto gold = random_labels(30, rng);
    auto pred = random_labels(30, rng);
    const MetricsReport a = per_class_f1(gold, pred);
    std::vector<std::size_t> order(gold.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    std::vector<EntityClass> g2, p2;
    for (std::size_t i : order) {
      g2.push_back(gold[i]);
      p2.push_back(pred[i]);
    }
    const MetricsReport b = per_class_f1(g2, p2);
    for (std::size_t c = 0; c < kNumClasses; ++c) ASSERT_EQ(a.classes[c].f1, b.classes[c].f1);
  }
}

TEST(PerClassF1, LengthMismatchIsContractError) {
  EXPECT_THROW(per_class_f1({B, P}, {B}), ContractError);
}

ReportRow row(const std::string& source, const std::string& variant,
              std::array<double, kNumClasses> f1, const std::string& dataset = "test") {
  ReportRow r{source, variant, {}};
  r.metrics.dataset = dataset;
  double sum = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    r.metrics.classes[c].f1 = f1[c];
    sum += f1[c];
  }
  r.metrics.average_f1 = sum / 3.0;
  return r;
}

TEST(Ablation, IdenticalRowsGiveZeroDeltas) {
  const auto f1 = std::array<double, kNumClasses>{0.9, 0.8, 0.7};
  const AblationReport rep =
      ablation_report({row("label", "ctm_add", f1), row("label", "noprompt_add", f1)});
  ASSERT_EQ(rep.deltas.size(), 1u);
  for (double d : rep.deltas[0].class_delta) EXPECT_EQ(d, 0.0);
  EXPECT_EQ(rep.deltas[0].average_delta, 0.0);
}

TEST(Ablation, DeltaIsInPoints) {
  const AblationReport rep = ablation_report({row("label", "ctm_add", {0.88, 0.88, 0.88}),
                                              row("-", "entity_typing", {0.86, 0.86, 0.86})});
  ASSERT_EQ(rep.deltas.size(), 1u);
  EXPECT_EQ(rep.deltas[0].reference, "ctm_add");
  EXPECT_EQ(rep.deltas[0].variant, "entity_typing");
  EXPECT_NEAR(rep.deltas[0].class_delta[0], 2.0, 1e-9);
  EXPECT_NEAR(rep.deltas[0].average_delta, 2.0, 1e-9);
}

TEST(Ablation, CanonicalRowOrder) {
  const auto f1 = std::array<double, kNumClasses>{0.5, 0.5, 0.5};
  const AblationReport rep = ablation_report(
      {row("dictionary", "ctm_add", f1), row("label", "noprompt_add", f1),
       row("dictionary", "textual_entailment", f1), row("label", "ctm_add", f1),
       row("label", "textual_entailment", f1), row("-", "entity_typing", f1)});
  std::vector<std::pair<std::string, std::string>> keys;
  for (const ReportRow& r : rep.rows) keys.emplace_back(r.source, r.variant);
  const std::vector<std::pair<std::string, std::string>> expected = {
      {"-", "entity_typing"},          {"label", "textual_entailment"},
      {"dictionary", "textual_entailment"}, {"label", "ctm_add"},
      {"label", "noprompt_add"},       {"dictionary", "ctm_add"}};
  EXPECT_EQ(keys, expected);
  // Deltas stay within a hypothesis source, plus the source-free baseline.
  std::size_t label_deltas = 0;
  for (const DeltaRow& d : rep.deltas) label_deltas += d.source == "label" ? 1 : 0;
  EXPECT_EQ(label_deltas, 3u);
}

TEST(Ablation, DuplicatesAndMixedDatasetsAreRejected) {
  const auto f1 = std::array<double, kNumClasses>{0.5, 0.5, 0.5};
  EXPECT_THROW(ablation_report({row("label", "ctm_add", f1), row("label", "ctm_add", f1)}),
               ContractError);
  EXPECT_THROW(
      ablation_report({row("label", "ctm_add", f1), row("label", "ctm_concat", f1, "novel")}),
      ContractError);
}

TEST(Ablation, JsonLinesCarryExpectedKeys) {
  const AblationReport rep = ablation_report({row("label", "ctm_add", {0.9, 0.8, 0.7}),
                                              row("-", "entity_typing", {0.8, 0.8, 0.7})});
  std::ostringstream metrics, deltas;
  write_report_jsonl(metrics, rep);
  write_deltas_jsonl(deltas, rep);
  std::istringstream m(metrics.str());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(m, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"dataset", "source", "variant", "f1", "precision", "recall",
                            "support", "degenerate", "average_f1", "weighted_f1"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_TRUE(j["f1"].contains("brand"));
    ++lines;
  }
  EXPECT_EQ(lines, 2u);
  const auto d = nlohmann::json::parse(deltas.str());
  EXPECT_NEAR(d["average_delta_points"].get<double>(), 10.0 / 3.0, 1e-9);
  EXPECT_NEAR(d["delta_points"]["brand"].get<double>(), 10.0, 1e-9);
}

}  // namespace
}  // namespace ctm
