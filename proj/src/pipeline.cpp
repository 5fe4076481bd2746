#include "ctm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ctm/encoder.hpp"
#include "ctm/errors.hpp"
#include "ctm/rng.hpp"

namespace ctm {

namespace fs = std::filesystem;

namespace {

constexpr std::array<FrontEnd, 2> kFrontEnds = {FrontEnd::kWordpiece, FrontEnd::kChar};
constexpr std::array<InitKind, 2> kSources = {InitKind::kLabels, InitKind::kDictionary};

// Fixed stream ids so every stage draws from its own seed-derived stream.
enum Stream : std::uint64_t {
  kGenerate = 1,
  kBackboneInit = 10,
  kPretrain = 20,
  kPairs = 30,
  kHeadInit = 1000,
  kTrainOrder = 2000,
  kPromptTune = 3000,
};

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  return Rng(seed).split(stream).next_u64();
}

std::size_t index_of(FrontEnd fe) { return fe == FrontEnd::kWordpiece ? 0 : 1; }
std::size_t index_of(InitKind k) { return k == InitKind::kLabels ? 0 : 1; }

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : " ") + fixed(x);
  return out;
}

template <typename F>
auto run_stage(const std::string& stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const Error& e) {
    throw Error(e.kind(), stage + ": " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw DataError(stage + ": " + e.what());
  }
}

class StageTimer {
 public:
  StageTimer(const Workspace& ws, std::string stage)
      : ws_(ws), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::error_code ec;
    fs::create_directories(ws_.logs(), ec);
    std::ofstream out(ws_.logs() / "timing.log", std::ios::app);
    out << stage_ << '\t' << fixed(s, 2) << '\n';
  }

 private:
  const Workspace& ws_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

void begin_command(const std::string& command, const RunConfig& config, const Workspace& ws,
                   std::ostream& log) {
  config.validate();
  fs::create_directories(ws.logs());
  std::ofstream out(ws.logs() / (command + ".config"), std::ios::binary);
  out << config.resolved();
  log << "[" << command << "] resolved config:\n" << config.resolved();
}

std::vector<Example> load_examples(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw DataError(what + " corpus " + path.string() + " does not exist");
  Corpus c = load_corpus(path);
  if (c.examples.empty()) throw DataError(what + " corpus " + path.string() + " is empty");
  return c.examples;
}

Vocab load_vocab(const Workspace& ws) {
  if (!fs::exists(ws.vocab())) throw DataError("vocabulary " + ws.vocab().string() + " missing");
  return Vocab::load(ws.vocab());
}

Backbone load_backbone(const Workspace& ws, FrontEnd fe) {
  const fs::path p = ws.backbone(fe);
  if (!fs::exists(p)) throw DataError("backbone checkpoint " + p.string() + " missing");
  return Backbone::load(p);
}

EncoderConfig encoder_config(const RunConfig& c, std::size_t vocab_size) {
  EncoderConfig e;
  e.d = c.d;
  e.layers = c.layers;
  e.heads = c.heads;
  e.ff_dim = c.ff_dim;
  e.max_seq = c.max_seq;
  e.vocab_size = vocab_size;
  e.char_dim = c.char_dim;
  return e;
}

TuneConfig tune_config(const RunConfig& c, std::uint64_t seed) {
  TuneConfig t;
  t.masking.rate = c.mask_rate;
  t.learning_rate = c.tune_learning_rate;
  t.epochs = c.tune_epochs;
  t.batch_size = c.tune_batch_size;
  t.seed = seed;
  t.max_seq = c.max_seq;
  return t;
}

std::vector<InitKind> sources_of(const RunConfig& c) {
  if (c.hypothesis_source == "label") return {InitKind::kLabels};
  if (c.hypothesis_source == "dictionary") return {InitKind::kDictionary};
  return {InitKind::kLabels, InitKind::kDictionary};
}

bool is_prompt_variant(const std::string& v) {
  return v.rfind("ctm_", 0) == 0 || v.rfind("noprompt_", 0) == 0;
}

FusionMode fusion_of(const std::string& variant) {
  if (variant == "textual_entailment" || variant == "ctm_bert_only") return FusionMode::kBertOnly;
  if (variant == "ctm_char_only") return FusionMode::kCharOnly;
  if (variant == "ctm_concat" || variant == "noprompt_concat") return FusionMode::kConcat;
  if (variant == "ctm_add" || variant == "noprompt_add") return FusionMode::kAdd;
  throw ConfigError("unknown variant '" + variant + "'");
}

const std::vector<std::string>& sourced_variant_names() {
  static const std::vector<std::string> v = {"textual_entailment", "ctm_add", "ctm_concat",
                                             "noprompt_add", "noprompt_concat",
                                             "ctm_bert_only", "ctm_char_only"};
  return v;
}

bool wanted(const RunConfig& c, const VariantSpec& v) {
  if (c.variants == "all") return true;
  std::stringstream ss(c.variants);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) continue;
    item = item.substr(b, e - b + 1);
    if (item == v.variant || item == v.source + ":" + v.variant) return true;
  }
  return false;
}

HypothesisSet hypotheses_for(const Workspace& ws, const VariantSpec& v, FrontEnd fe) {
  const InitKind source = parse_init_kind(v.source);
  if (v.variant == "textual_entailment") return HypothesisSet::literal_text(source);
  const bool tuned = v.variant.rfind("ctm_", 0) == 0;
  std::vector<PromptMatrix> prompts;
  for (EntityClass c : kAllClasses) {
    const fs::path p = ws.prompt(source, fe, c, tuned);
    if (!fs::exists(p)) throw DataError("prompt checkpoint " + p.string() + " missing");
    prompts.push_back(load_prompt(p));
  }
  return HypothesisSet::from_prompts(std::move(prompts));
}

std::vector<std::string> prompt_refs_for(const Workspace& ws, const VariantSpec& v,
                                         FusionMode mode) {
  std::vector<std::string> refs;
  if (v.variant == "textual_entailment" || !is_prompt_variant(v.variant)) return refs;
  const InitKind source = parse_init_kind(v.source);
  const bool tuned = v.variant.rfind("ctm_", 0) == 0;
  for (FrontEnd fe : kFrontEnds) {
    if (fe == FrontEnd::kWordpiece && !uses_wordpiece(mode)) continue;
    if (fe == FrontEnd::kChar && !uses_char(mode)) continue;
    for (EntityClass c : kAllClasses) {
      refs.push_back(fs::relative(ws.prompt(source, fe, c, tuned), ws.root()).string());
    }
  }
  return refs;
}

void train_variant(const RunConfig& cfg, const Workspace& ws, const VariantSpec& v,
                   const Vocab& vocab, const std::vector<Example>& train,
                   const std::vector<PairedExample>& pairs, std::ostream& log) {
  StageTimer timer(ws, "train " + v.source + ":" + v.variant);
  const std::size_t rank = row_rank(v.source, v.variant);
  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epoch;
  tc.seed = derive(cfg.seed, kTrainOrder + rank);
  Rng head_rng(derive(cfg.seed, kHeadInit + rank));
  fs::create_directories(ws.model(v.source, v.variant).parent_path());
  TrainHistory history;
  if (v.variant == "entity_typing") {
    Backbone wp = load_backbone(ws, FrontEnd::kWordpiece);
    BaselineModel model = make_baseline_model(wp, cfg.max_seq, head_rng);
    history = train_baseline(model, vocab, train, tc);
    save_baseline_model(ws.model(v.source, v.variant), model);
  } else {
    const FusionMode mode = fusion_of(v.variant);
    std::optional<Backbone> wp, ch;
    HypothesisSet wp_hyp, ch_hyp;
    if (uses_wordpiece(mode)) {
      wp = load_backbone(ws, FrontEnd::kWordpiece);
      wp_hyp = hypotheses_for(ws, v, FrontEnd::kWordpiece);
    }
    if (uses_char(mode)) {
      ch = load_backbone(ws, FrontEnd::kChar);
      ch_hyp = hypotheses_for(ws, v, FrontEnd::kChar);
    }
    EntailmentModel model = make_entailment_model(
        mode, wp ? &*wp : nullptr, ch ? &*ch : nullptr, std::move(wp_hyp), std::move(ch_hyp),
        cfg.alpha_init, cfg.max_seq, head_rng);
    history = train_step2(model, vocab, pairs, tc);
    save_entailment_model(ws.model(v.source, v.variant), model, prompt_refs_for(ws, v, mode));
    if (mode == FusionMode::kAdd || mode == FusionMode::kConcat) {
      log << "  alpha = " << fixed(model.alpha.item(), 6) << '\n';
    }
  }
  log << "  " << v.source << ":" << v.variant << " epoch loss " << join(history.epoch_loss)
      << '\n';
}

// Predictions of one trained variant, keyed by "title\tentity".
std::map<std::string, EntityClass> predict_all(const Workspace& ws, const VariantSpec& v,
                                               const Vocab& vocab,
                                               const std::vector<Example>& examples) {
  const fs::path path = ws.model(v.source, v.variant);
  if (!fs::exists(path)) throw DataError("model checkpoint " + path.string() + " missing");
  std::map<std::string, EntityClass> out;
  if (v.variant == "entity_typing") {
    const BaselineModel m = load_baseline_model(path);
    for (const Example& ex : examples) {
      auto key = ex.title + "\t" + ex.entity;
      if (!out.contains(key)) out[key] = predict_baseline(m, vocab, ex.title, ex.entity);
    }
  } else {
    const EntailmentModel m = load_entailment_model(path);
    for (const Example& ex : examples) {
      auto key = ex.title + "\t" + ex.entity;
      if (!out.contains(key)) out[key] = predict_class(m, vocab, ex.title, ex.entity).cls;
    }
  }
  return out;
}

ReportRow score(const VariantSpec& v, const std::map<std::string, EntityClass>& predictions,
                const std::vector<Example>& examples, const std::string& split) {
  std::vector<EntityClass> gold, pred;
  for (const Example& ex : examples) {
    gold.push_back(ex.gold);
    auto it = predictions.find(ex.title + "\t" + ex.entity);
    if (it == predictions.end()) {
      throw DataError("split '" + split + "' holds an example outside the test corpus");
    }
    pred.push_back(it->second);
  }
  return ReportRow{v.source, v.variant, per_class_f1(gold, pred, split)};
}

void write_text_file(const fs::path& path, const std::string& body) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << body;
  if (!out) throw DataError("failed writing " + path.string());
}

void write_reports(const Workspace& ws, const std::string& prefix, const AblationReport& r) {
  std::ostringstream metrics, deltas, text;
  write_report_jsonl(metrics, r);
  write_deltas_jsonl(deltas, r);
  write_report_text(text, r);
  write_text_file(ws.reports() / (prefix + "metrics." + r.dataset + ".jsonl"), metrics.str());
  write_text_file(ws.reports() / (prefix + "deltas." + r.dataset + ".jsonl"), deltas.str());
  write_text_file(ws.reports() / (prefix + "table." + r.dataset + ".txt"), text.str());
}

void run_prompt_tune(const RunConfig& cfg, const Workspace& ws,
                     const std::vector<VariantSpec>& plan, std::ostream& log) {
  std::set<std::string> init_sources, tuned_sources;
  for (const VariantSpec& v : plan) {
    if (!is_prompt_variant(v.variant)) continue;
    init_sources.insert(v.source);
    if (v.variant.rfind("ctm_", 0) == 0) tuned_sources.insert(v.source);
  }
  if (init_sources.empty()) {
    log << "  no prompt-based variants selected; nothing to do\n";
    return;
  }
  const Vocab vocab = load_vocab(ws);
  const std::vector<Example> train = load_examples(ws.train_corpus(), "training");
  for (FrontEnd fe : kFrontEnds) {
    const Backbone backbone = load_backbone(ws, fe);
    for (InitKind source : kSources) {
      const std::string src(init_kind_name(source));
      if (!init_sources.contains(src)) continue;
      for (EntityClass cls : kAllClasses) {
        const PromptMatrix init = init_prompt(source, cls, backbone, vocab);
        fs::create_directories(ws.prompt(source, fe, cls, false).parent_path());
        save_prompt(ws.prompt(source, fe, cls, false), init);
        if (!tuned_sources.contains(src)) continue;
        StageTimer timer(ws, "prompt-tune " + src + "." + std::string(front_end_name(fe)) +
                                 "." + std::string(class_name(cls)));
        std::vector<Example> class_examples;
        for (const Example& ex : train) {
          if (ex.gold == cls) class_examples.push_back(ex);
        }
        const std::uint64_t seed =
            derive(cfg.seed, kPromptTune + 9 * index_of(source) + 3 * index_of(fe) +
                                 class_index(cls));
        TuneResult r = tune_prompt(backbone, class_examples, init, vocab, tune_config(cfg, seed));
        save_prompt(ws.prompt(source, fe, cls, true), r.prompt);
        log << "  " << src << " " << front_end_name(fe) << " " << class_name(cls)
            << " loss " << join(r.loss_history) << '\n';
      }
    }
  }
}

}  // namespace

fs::path Workspace::backbone(FrontEnd fe) const {
  return root_ / "backbones" / (std::string(front_end_name(fe)) + ".ctm");
}

fs::path Workspace::prompt(InitKind source, FrontEnd fe, EntityClass cls, bool tuned) const {
  return root_ / "prompts" /
         (std::string(init_kind_name(source)) + "." + std::string(front_end_name(fe)) + "." +
          std::string(class_name(cls)) + (tuned ? ".tuned" : ".init") + ".ctm");
}

fs::path Workspace::model(const std::string& source, const std::string& variant) const {
  if (source == "-") return root_ / "models" / (variant + ".ctm");
  return root_ / "models" / (source + "." + variant + ".ctm");
}

std::string variant_key(const std::string& model, const std::string& fusion) {
  if (model == "entity_typing" || model == "textual_entailment") return model;
  std::string f = fusion;
  std::replace(f.begin(), f.end(), '-', '_');
  if (model == "ctm") return "ctm_" + f;
  if (model == "noprompt") {
    if (fusion == "add" || fusion == "concat") return "noprompt_" + f;
    throw ConfigError("model 'noprompt' supports fusion add or concat, not '" + fusion + "'");
  }
  throw ConfigError("unknown model '" + model + "'");
}

std::vector<VariantSpec> plan_variants(const RunConfig& config) {
  std::vector<VariantSpec> plan;
  const bool handcrafted = config.hypothesis_source == "handcrafted";
  if (wanted(config, {"-", "entity_typing"})) plan.push_back({"-", "entity_typing"});
  for (InitKind source : sources_of(config)) {
    for (const std::string& v : sourced_variant_names()) {
      if (handcrafted && v.rfind("ctm_", 0) == 0) continue;
      VariantSpec spec{std::string(init_kind_name(source)), v};
      if (wanted(config, spec)) plan.push_back(spec);
    }
  }
  std::stable_sort(plan.begin(), plan.end(), [](const VariantSpec& a, const VariantSpec& b) {
    return row_rank(a.source, a.variant) < row_rank(b.source, b.variant);
  });
  return plan;
}

std::vector<VariantSpec> selected_variants(const RunConfig& config) {
  const std::string key = variant_key(config.model, config.fusion);
  if (key == "entity_typing") return {{"-", key}};
  if (config.hypothesis_source == "handcrafted" && key.rfind("ctm_", 0) == 0) {
    throw ConfigError("hypothesis_source 'handcrafted' cannot be combined with model 'ctm'");
  }
  std::vector<VariantSpec> out;
  for (InitKind source : sources_of(config)) out.push_back({std::string(init_kind_name(source)), key});
  return out;
}

std::vector<FormattedInput> pretraining_inputs(const std::vector<Example>& train,
                                               const std::vector<std::string>& background,
                                               FrontEnd fe, const Vocab& vocab,
                                               std::size_t max_seq) {
  std::vector<FormattedInput> out;
  out.reserve(train.size() * 3 + background.size());
  for (const Example& ex : train) {
    out.push_back(format_input(ex.title, "", NoHypothesis{}, fe, vocab, max_seq));
    for (InitKind source : kSources) {
      out.push_back(format_input(ex.title, ex.entity,
                                 LiteralHypothesis{hypothesis_text(source, ex.gold)}, fe, vocab,
                                 max_seq));
    }
  }
  for (const std::string& title : background) {
    out.push_back(format_input(title, "", NoHypothesis{}, fe, vocab, max_seq));
  }
  return out;
}

std::vector<std::string> vocabulary_texts(const std::vector<Example>& train,
                                          const std::vector<std::string>& background) {
  std::vector<std::string> out;
  out.reserve(train.size() * 3 + background.size());
  for (const Example& ex : train) {
    out.push_back(ex.title);
    for (InitKind source : kSources) {
      out.push_back(ex.entity + " " + hypothesis_text(source, ex.gold));
    }
  }
  out.insert(out.end(), background.begin(), background.end());
  return out;
}

std::vector<std::string> load_background(const Workspace& ws) {
  std::vector<std::string> out;
  if (!fs::exists(ws.background_corpus())) return out;
  std::ifstream in(ws.background_corpus(), std::ios::binary);
  if (!in) throw DataError("cannot read " + ws.background_corpus().string());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<Example> load_split(const Workspace& ws, const std::string& split) {
  std::vector<Example> out;
  if (split == "test") {
    out = load_examples(ws.test_corpus(), "test");
  } else if (split == "novel") {
    out = build_novel_entity_set(load_examples(ws.train_corpus(), "training"),
                                 load_examples(ws.test_corpus(), "test"));
  } else if (split == "made_up") {
    out = load_examples(ws.made_up_corpus(), "made-up brand");
  } else {
    throw DataError("unknown evaluation split '" + split + "'");
  }
  if (out.empty()) throw DataError("evaluation split '" + split + "' is empty");
  return out;
}

void cmd_gen_data(const RunConfig& config, const Workspace& ws, std::ostream& log) {
  run_stage("gen-data", [&] {
    begin_command("gen-data", config, ws, log);
    StageTimer timer(ws, "gen-data");
    SyntheticSpec spec;
    spec.train_counts = {config.train_brand, config.train_product, config.train_feature};
    spec.test_counts = {config.test_brand, config.test_product, config.test_feature};
    spec.reserve_fraction = config.reserve_fraction;
    spec.brand_lexicon = config.brand_lexicon;
    spec.made_up_brands = config.made_up_brands;
    spec.product_lexicon = config.product_lexicon;
    spec.feature_lexicon = config.feature_lexicon;
    Rng rng(derive(config.seed, kGenerate));
    SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
    write_corpus(ws.train_corpus(), corpus.train);
    write_corpus(ws.test_corpus(), corpus.test);
    write_manifest(ws.manifest(), corpus.manifest);
    std::vector<std::string> made_up;
    for (const LexiconEntry& e : corpus.manifest.lexicon) {
      if (e.made_up) made_up.push_back(e.text);
    }
    std::vector<Example> made_up_test;
    for (const Example& ex : corpus.test) {
      for (const std::string& brand : made_up) {
        if (entity_in_title(ex.title, brand)) {
          made_up_test.push_back(ex);
          break;
        }
      }
    }
    write_corpus(ws.made_up_corpus(), made_up_test);
    {
      std::ofstream out(ws.background_corpus(), std::ios::binary);
      for (const std::string& title : corpus.background) out << title << '\n';
      if (!out) throw DataError("cannot write " + ws.background_corpus().string());
    }
    log << "  train " << corpus.train.size() << ", test " << corpus.test.size()
        << ", novel-entity test " << corpus.manifest.reserved_test_examples
        << ", made-up-brand test " << made_up_test.size() << ", background "
        << corpus.background.size() << '\n';
  });
}

void cmd_build_vocab(const RunConfig& config, const Workspace& ws, std::ostream& log) {
  run_stage("build-vocab", [&] {
    begin_command("build-vocab", config, ws, log);
    StageTimer timer(ws, "build-vocab");
    Corpus corpus = load_corpus(ws.train_corpus());
    write_rejects(ws.rejects(), corpus.rejects);
    if (corpus.examples.empty()) throw DataError("training corpus is empty");
    const auto texts = vocabulary_texts(corpus.examples, load_background(ws));
    const Vocab vocab = Vocab::build(texts, config.vocab_size, config.min_freq);
    vocab.save(ws.vocab());
    log << "  vocabulary of " << vocab.size() << " entries from " << texts.size()
        << " texts; " << corpus.rejects.size() << " rejected lines\n";
  });
}

void cmd_pretrain(const RunConfig& config, const Workspace& ws, std::ostream& log) {
  run_stage("pretrain", [&] {
    begin_command("pretrain", config, ws, log);
    const Vocab vocab = load_vocab(ws);
    const std::vector<Example> train = load_examples(ws.train_corpus(), "training");
    const std::vector<std::string> background = load_background(ws);
    for (FrontEnd fe : kFrontEnds) {
      StageTimer timer(ws, "pretrain " + std::string(front_end_name(fe)));
      Rng init_rng(derive(config.seed, kBackboneInit + index_of(fe)));
      Backbone backbone = Backbone::init(fe, encoder_config(config, vocab.size()), init_rng);
      const auto inputs = pretraining_inputs(train, background, fe, vocab, config.max_seq);
      PretrainConfig pc;
      pc.epochs = config.pretrain_epochs;
      pc.batch_size = config.pretrain_batch_size;
      pc.learning_rate = config.pretrain_learning_rate;
      pc.masking.rate = config.mask_rate;
      Rng rng(derive(config.seed, kPretrain + index_of(fe)));
      PretrainResult r = pretrain_mlm(backbone, inputs, vocab, pc, rng);
      fs::create_directories(ws.backbone(fe).parent_path());
      backbone.save(ws.backbone(fe));
      log << "  " << front_end_name(fe) << " probe loss " << join(r.loss_history) << '\n';
    }
  });
}

void cmd_prompt_tune(const RunConfig& config, const Workspace& ws, std::ostream& log) {
  run_stage("prompt-tune", [&] {
    begin_command("prompt-tune", config, ws, log);
    run_prompt_tune(config, ws, plan_variants(config), log);
  });
}

void cmd_train(const RunConfig& config, const Workspace& ws, std::ostream& log) {
  run_stage("train", [&] {
    begin_command("train", config, ws, log);
    const Vocab vocab = load_vocab(ws);
    const std::vector<Example> train = load_examples(ws.train_corpus(), "training");
    Rng pair_rng(derive(config.seed, kPairs));
    const auto pairs = make_all_pairs(train, pair_rng);
    for (const VariantSpec& v : selected_variants(config)) {
      train_variant(config, ws, v, vocab, train, pairs, log);
    }
  });
}

MetricsReport cmd_eval(const RunConfig& config, const Workspace& ws, std::ostream& log) {
  return run_stage("eval", [&] {
    begin_command("eval", config, ws, log);
    const Vocab vocab = load_vocab(ws);
    const std::vector<Example> examples = load_split(ws, config.dataset);
    std::vector<ReportRow> rows;
    for (const VariantSpec& v : selected_variants(config)) {
      rows.push_back(score(v, predict_all(ws, v, vocab, examples), examples, config.dataset));
    }
    const AblationReport report = ablation_report(rows);
    write_reports(ws, "eval.", report);
    std::ostringstream text;
    write_report_text(text, report);
    log << text.str();
    return rows.front().metrics;
  });
}

void cmd_pipeline(const RunConfig& config, const Workspace& ws, std::ostream& log) {
  begin_command("pipeline", config, ws, log);
  StageTimer total(ws, "pipeline");
  if (!fs::exists(ws.train_corpus()) || !fs::exists(ws.test_corpus())) {
    cmd_gen_data(config, ws, log);
  }
  cmd_build_vocab(config, ws, log);
  cmd_pretrain(config, ws, log);
  const std::vector<VariantSpec> plan = plan_variants(config);
  if (plan.empty()) throw ConfigError("pipeline: the variants setting selects nothing");
  run_stage("prompt-tune", [&] {
    begin_command("prompt-tune", config, ws, log);
    run_prompt_tune(config, ws, plan, log);
  });
  run_stage("train", [&] {
    begin_command("train", config, ws, log);
    const Vocab vocab = load_vocab(ws);
    const std::vector<Example> train = load_examples(ws.train_corpus(), "training");
    Rng pair_rng(derive(config.seed, kPairs));
    const auto pairs = make_all_pairs(train, pair_rng);
    for (const VariantSpec& v : plan) train_variant(config, ws, v, vocab, train, pairs, log);
  });
  run_stage("eval", [&] {
    begin_command("eval", config, ws, log);
    StageTimer timer(ws, "eval");
    const Vocab vocab = load_vocab(ws);
    const std::vector<Example> test = load_split(ws, "test");
    std::vector<std::string> splits = {"test", "novel"};
    if (fs::exists(ws.made_up_corpus()) && load_corpus(ws.made_up_corpus()).examples.size() > 0) {
      splits.push_back("made_up");
    }
    std::vector<std::map<std::string, EntityClass>> predictions;
    for (const VariantSpec& v : plan) predictions.push_back(predict_all(ws, v, vocab, test));
    for (const std::string& split : splits) {
      const std::vector<Example> examples = split == "test" ? test : load_split(ws, split);
      std::vector<ReportRow> rows;
      for (std::size_t i = 0; i < plan.size(); ++i) {
        rows.push_back(score(plan[i], predictions[i], examples, split));
      }
      const AblationReport report = ablation_report(rows);
      write_reports(ws, "", report);
      std::ostringstream text;
      write_report_text(text, report);
      log << text.str() << '\n';
    }
  });
}

}  // namespace ctm
