// Command-line driver: data generation, vocabulary, pretraining, prompt
// tuning, classifier training, evaluation and the full ablation pipeline.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <streambuf>
#include <string>

#include "CLI11.hpp"
#include "ctm/config.hpp"
#include "ctm/errors.hpp"
#include "ctm/pipeline.hpp"

namespace {

// Duplicates everything written to it into two buffers.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    const bool ok = a_->sputc(static_cast<char>(c)) != EOF && b_->sputc(static_cast<char>(c)) != EOF;
    return ok ? c : EOF;
  }
  int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

int exit_code(ctm::ErrorKind kind) {
  switch (kind) {
    case ctm::ErrorKind::kConfig: return 1;
    case ctm::ErrorKind::kData: return 2;
    case ctm::ErrorKind::kInternal: return 3;
  }
  return 3;
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "ctm-out";
};

using Command = std::function<void(const ctm::RunConfig&, const ctm::Workspace&, std::ostream&)>;

int run(const std::string& name, const Options& opts, const Command& command) {
  try {
    ctm::RunConfig config;
    if (!opts.config_path.empty()) config = ctm::load_config(opts.config_path);
    if (opts.seed) config.seed = *opts.seed;
    const ctm::Workspace ws(opts.out);
    std::filesystem::create_directories(ws.logs());
    std::ofstream file(ws.logs() / (name + ".log"), std::ios::binary);
    TeeBuf tee(std::cerr.rdbuf(), file.rdbuf());
    std::ostream log(&tee);
    command(config, ws, log);
    log.flush();
    return 0;
  } catch (const ctm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous prompt tuning for entity typing as textual entailment"};
  app.require_subcommand(1);

  const std::map<std::string, std::pair<std::string, Command>> commands = {
      {"gen-data", {"Generate a synthetic train/test corpus", ctm::cmd_gen_data}},
      {"build-vocab", {"Build the wordpiece vocabulary", ctm::cmd_build_vocab}},
      {"pretrain", {"MLM-pretrain the wordpiece and char backbones", ctm::cmd_pretrain}},
      {"prompt-tune", {"Tune per-class hypothesis prompts", ctm::cmd_prompt_tune}},
      {"train", {"Train the configured classifier", ctm::cmd_train}},
      {"eval",
       {"Evaluate the configured classifier",
        [](const ctm::RunConfig& c, const ctm::Workspace& ws, std::ostream& log) {
          ctm::cmd_eval(c, ws, log);
        }}},
      {"pipeline", {"Run every stage and write the ablation reports", ctm::cmd_pipeline}},
  };

  Options opts;
  std::uint64_t seed = 0;
  std::string selected;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", opts.config_path, "Run config file (key = value lines)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the config seed")
        ->each([&](const std::string&) { opts.seed = seed; });
    sub->add_option("--out", opts.out, "Workspace directory")->capture_default_str();
    sub->callback([&selected, n = name] { selected = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (opts.seed) opts.seed = seed;
  return run(selected, opts, commands.at(selected).second);
}
