#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "ctm/classify.hpp"
#include "ctm/config.hpp"
#include "ctm/data.hpp"
#include "ctm/metrics.hpp"
#include "ctm/prompt.hpp"

namespace ctm {

// File layout under the --out directory. Stages exchange data only through
// these files, so each one can be re-run on its own.
class Workspace {
 public:
  explicit Workspace(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path train_corpus() const { return root_ / "data" / "train.tsv"; }
  std::filesystem::path test_corpus() const { return root_ / "data" / "test.tsv"; }
  // Test examples whose title mentions a made-up brand (synthetic data only).
  std::filesystem::path made_up_corpus() const { return root_ / "data" / "test_made_up.tsv"; }
  // Unlabeled titles, one per line, used only for vocabulary and pretraining.
  std::filesystem::path background_corpus() const { return root_ / "data" / "background.txt"; }
  std::filesystem::path rejects() const { return root_ / "data" / "rejects.tsv"; }
  std::filesystem::path manifest() const { return root_ / "data" / "manifest.txt"; }
  std::filesystem::path vocab() const { return root_ / "vocab.txt"; }
  std::filesystem::path backbone(FrontEnd fe) const;
  std::filesystem::path prompt(InitKind source, FrontEnd fe, EntityClass cls, bool tuned) const;
  std::filesystem::path model(const std::string& source, const std::string& variant) const;
  std::filesystem::path reports() const { return root_ / "reports"; }
  std::filesystem::path logs() const { return root_ / "logs"; }

 private:
  std::filesystem::path root_;
};

// One trainable row of the ablation matrix.
struct VariantSpec {
  std::string source;   // "label", "dictionary" or "-" for entity typing
  std::string variant;  // e.g. "ctm_add"
};

// Variant key for a (model, fusion) pair from the config schema.
std::string variant_key(const std::string& model, const std::string& fusion);
// Rows the pipeline trains for this config, in report order.
std::vector<VariantSpec> plan_variants(const RunConfig& config);
// The single model selected by model/fusion/hypothesis_source.
std::vector<VariantSpec> selected_variants(const RunConfig& config);

// Pretraining texts: every training and background title alone, and every
// training title with its entity and the gold hypothesis phrase of each init
// kind.
std::vector<FormattedInput> pretraining_inputs(const std::vector<Example>& train,
                                               const std::vector<std::string>& background,
                                               FrontEnd fe, const Vocab& vocab,
                                               std::size_t max_seq);
std::vector<std::string> vocabulary_texts(const std::vector<Example>& train,
                                          const std::vector<std::string>& background);
// Background titles of the workspace; empty when the file is absent.
std::vector<std::string> load_background(const Workspace& ws);

// Commands. Each validates the config, logs its resolved form, and reports
// failures as errors prefixed with the stage name. `log` receives progress.
void cmd_gen_data(const RunConfig& config, const Workspace& ws, std::ostream& log);
void cmd_build_vocab(const RunConfig& config, const Workspace& ws, std::ostream& log);
void cmd_pretrain(const RunConfig& config, const Workspace& ws, std::ostream& log);
void cmd_prompt_tune(const RunConfig& config, const Workspace& ws, std::ostream& log);
void cmd_train(const RunConfig& config, const Workspace& ws, std::ostream& log);
MetricsReport cmd_eval(const RunConfig& config, const Workspace& ws, std::ostream& log);
void cmd_pipeline(const RunConfig& config, const Workspace& ws, std::ostream& log);

// Examples of an evaluation split ("test", "novel" or "made_up"). Throws
// DataError when the split is unknown, unavailable or empty.
std::vector<Example> load_split(const Workspace& ws, const std::string& split);

}  // namespace ctm
