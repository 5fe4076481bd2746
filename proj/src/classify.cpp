#include "ctm/classify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctm/errors.hpp"
#include "ctm/ops.hpp"
#include "ctm/optim.hpp"

namespace ctm {

namespace {

Tensor linear_weight(std::size_t in, std::size_t out, Rng& rng) {
  Tensor t = Tensor::zeros({in, out});
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : t.mutable_values()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor cls_for(const Backbone& backbone, const HypothesisSet& hyps, const Vocab& vocab,
               std::string_view title, std::string_view entity, EntityClass cls,
               std::size_t max_seq) {
  const std::size_t c = class_index(cls);
  if (c >= kNumClasses) throw ContractError("unknown entity class");
  FormattedInput in;
  Tensor x;
  if (hyps.kind == HypothesisSet::Kind::kLiteral) {
    in = format_input(title, entity, LiteralHypothesis{hyps.literal[c]}, backbone.front_end(),
                      vocab, max_seq);
    x = backbone.input_embeddings(in, nullptr);
  } else {
    if (!hyps.prompts[c]) {
      throw ConfigError("no " + std::string(front_end_name(backbone.front_end())) +
                        " prompt for class " + std::string(class_name(cls)));
    }
    const Tensor& h = hyps.prompts[c]->h;
    in = format_input(title, entity, PromptHypothesis{h.rows()}, backbone.front_end(), vocab,
                      max_seq);
    x = backbone.input_embeddings(in, &h);
  }
  return backbone.cls_vector(backbone.encode(x, in.attention_mask()));
}

void set_trainable(const std::vector<Tensor>& params, bool on) {
  for (Tensor t : params) t.set_requires_grad(on);
}

template <typename Item, typename LogitsFn, typename TargetFn>
TrainHistory fit(const std::vector<Item>& items, const std::vector<Tensor>& params,
                 const TrainConfig& config, LogitsFn logits_of, TargetFn target_of) {
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  TrainHistory history;
  if (config.epochs == 0) return history;
  set_trainable(params, true);
  Adam adam(params, AdamOptions{config.learning_rate});
  Rng rng(config.seed);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      TapeScope scope(tape);
      std::vector<Tensor> rows;
      std::vector<std::size_t> targets;
      for (std::size_t i = start; i < end; ++i) {
        rows.push_back(logits_of(items[order[i]]));
        targets.push_back(target_of(items[order[i]]));
      }
      Tensor loss = ops::cross_entropy_with_logits(ops::concat_rows(rows), targets);
      tape.backward(loss);
      adam.step();
      adam.zero_grad();
      total += loss.item();
      ++batches;
    }
    history.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  set_trainable(params, false);
  return history;
}

// Copies `src` into `dst` with every key and array name prefixed.
void nest(NamedArrays& dst, const std::string& prefix, const NamedArrays& src) {
  for (const auto& [k, v] : src.meta) dst.meta[prefix + k] = v;
  for (const auto& [n, t] : src.arrays) dst.add(prefix + n, t);
}

NamedArrays unnest(const NamedArrays& src, const std::string& prefix) {
  NamedArrays out;
  for (const auto& [k, v] : src.meta) {
    if (k.rfind(prefix, 0) == 0) out.meta[k.substr(prefix.size())] = v;
  }
  for (const auto& [n, t] : src.arrays) {
    if (n.rfind(prefix, 0) == 0) out.add(n.substr(prefix.size()), t);
  }
  return out;
}

MlpHead head_from(const NamedArrays& a, const std::string& prefix) {
  NamedArrays h = unnest(a, prefix);
  return MlpHead::from_parameters(h.arrays);
}

void save_hypotheses(NamedArrays& a, const std::string& tag, const HypothesisSet& hyps) {
  const std::string p = "hypotheses." + tag + ".";
  a.meta[p + "kind"] = hyps.kind == HypothesisSet::Kind::kLiteral ? "literal" : "prompt";
  for (EntityClass c : kAllClasses) {
    const std::string name(class_name(c));
    if (hyps.kind == HypothesisSet::Kind::kLiteral) {
      a.meta[p + "literal." + name] = hyps.literal[class_index(c)];
    } else if (const auto& pm = hyps.prompts[class_index(c)]) {
      nest(a, "prompt." + tag + "." + name + ".", prompt_to_arrays(*pm));
    }
  }
}

HypothesisSet load_hypotheses(const NamedArrays& a, const std::string& tag) {
  const std::string p = "hypotheses." + tag + ".";
  HypothesisSet hyps;
  const std::string& kind = a.meta_value(p + "kind");
  if (kind == "literal") {
    hyps.kind = HypothesisSet::Kind::kLiteral;
    for (EntityClass c : kAllClasses) {
      hyps.literal[class_index(c)] = a.meta_value(p + "literal." + std::string(class_name(c)));
    }
  } else if (kind == "prompt") {
    hyps.kind = HypothesisSet::Kind::kPrompt;
    for (EntityClass c : kAllClasses) {
      NamedArrays sub = unnest(a, "prompt." + tag + "." + std::string(class_name(c)) + ".");
      if (!sub.arrays.empty()) hyps.prompts[class_index(c)] = prompt_from_arrays(sub);
    }
  } else {
    throw DataError("unknown hypothesis kind '" + kind + "'");
  }
  return hyps;
}

std::size_t meta_size(const NamedArrays& a, const std::string& key) {
  try {
    return static_cast<std::size_t>(std::stoull(a.meta_value(key)));
  } catch (const std::invalid_argument&) {
    throw DataError("checkpoint metadata '" + key + "' is not a number");
  }
}

}  // namespace

std::string_view fusion_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::kAdd: return "add";
    case FusionMode::kConcat: return "concat";
    case FusionMode::kBertOnly: return "bert-only";
    case FusionMode::kCharOnly: return "char-only";
  }
  return "?";
}

FusionMode parse_fusion(std::string_view name) {
  for (FusionMode m : {FusionMode::kAdd, FusionMode::kConcat, FusionMode::kBertOnly,
                       FusionMode::kCharOnly}) {
    if (fusion_name(m) == name) return m;
  }
  throw ConfigError("unknown fusion mode '" + std::string(name) + "'");
}

bool uses_wordpiece(FusionMode mode) { return mode != FusionMode::kCharOnly; }
bool uses_char(FusionMode mode) { return mode != FusionMode::kBertOnly; }

std::size_t fusion_width(FusionMode mode, std::size_t d) {
  return mode == FusionMode::kConcat ? 2 * d : d;
}

Tensor fuse(const Tensor* v_bert, const Tensor* v_char, const Tensor& alpha,
            FusionMode mode) {
  if (uses_wordpiece(mode) && v_bert == nullptr) {
    throw ContractError("fuse: " + std::string(fusion_name(mode)) + " needs a wordpiece vector");
  }
  if (uses_char(mode) && v_char == nullptr) {
    throw ContractError("fuse: " + std::string(fusion_name(mode)) + " needs a char vector");
  }
  if (mode == FusionMode::kBertOnly) return *v_bert;
  if (mode == FusionMode::kCharOnly) return *v_char;
  if (v_bert->rows() != v_char->rows() || v_bert->cols() != v_char->cols()) {
    throw DimensionError("fuse: vectors " + shape_string(v_bert->shape()) + " and " +
                         shape_string(v_char->shape()) + " differ in width");
  }
  Tensor scaled = ops::scale_by(*v_char, alpha);
  if (mode == FusionMode::kAdd) return ops::add(*v_bert, scaled);
  const Tensor parts[] = {*v_bert, scaled};
  return ops::concat_cols(parts);
}

MlpHead MlpHead::init(std::size_t in, std::size_t out, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("MLP head widths must be positive");
  MlpHead h;
  h.w1_ = linear_weight(in, kHidden1, rng);
  h.b1_ = Tensor::zeros({1, kHidden1});
  h.w2_ = linear_weight(kHidden1, kHidden2, rng);
  h.b2_ = Tensor::zeros({1, kHidden2});
  h.w3_ = linear_weight(kHidden2, out, rng);
  h.b3_ = Tensor::zeros({1, out});
  return h;
}

Tensor MlpHead::forward(const Tensor& x) const {
  if (x.cols() != in_width()) {
    throw DimensionError("MLP head expects width " + std::to_string(in_width()) + ", got " +
                         shape_string(x.shape()));
  }
  Tensor h = ops::relu(ops::add(ops::matmul(x, w1_), b1_));
  h = ops::relu(ops::add(ops::matmul(h, w2_), b2_));
  return ops::add(ops::matmul(h, w3_), b3_);
}

std::vector<std::pair<std::string, Tensor>> MlpHead::named_parameters() const {
  return {{"w1", w1_}, {"b1", b1_}, {"w2", w2_}, {"b2", b2_}, {"w3", w3_}, {"b3", b3_}};
}

std::vector<Tensor> MlpHead::parameters() const { return {w1_, b1_, w2_, b2_, w3_, b3_}; }

MlpHead MlpHead::from_parameters(const std::vector<std::pair<std::string, Tensor>>& named) {
  MlpHead h;
  for (const auto& [name, t] : named) {
    if (name == "w1") h.w1_ = t;
    else if (name == "b1") h.b1_ = t;
    else if (name == "w2") h.w2_ = t;
    else if (name == "b2") h.b2_ = t;
    else if (name == "w3") h.w3_ = t;
    else if (name == "b3") h.b3_ = t;
  }
  for (const Tensor* t : {&h.w1_, &h.b1_, &h.w2_, &h.b2_, &h.w3_, &h.b3_}) {
    if (!t->defined()) throw DataError("MLP head checkpoint is incomplete");
  }
  if (h.w1_.cols() != kHidden1 || h.w2_.rows() != kHidden1 || h.w2_.cols() != kHidden2 ||
      h.w3_.rows() != kHidden2 || h.b1_.numel() != kHidden1 || h.b2_.numel() != kHidden2 ||
      h.b3_.numel() != h.w3_.cols()) {
    throw DataError("MLP head checkpoint has unexpected layer widths");
  }
  return h;
}

HypothesisSet HypothesisSet::literal_text(InitKind source) {
  HypothesisSet h;
  h.kind = Kind::kLiteral;
  for (EntityClass c : kAllClasses) h.literal[class_index(c)] = hypothesis_text(source, c);
  return h;
}

HypothesisSet HypothesisSet::from_prompts(std::vector<PromptMatrix> prompts) {
  HypothesisSet h;
  h.kind = Kind::kPrompt;
  for (PromptMatrix& p : prompts) {
    auto& slot = h.prompts[class_index(p.cls)];
    if (slot) {
      throw ContractError("two prompts for class " + std::string(class_name(p.cls)));
    }
    slot = std::move(p);
  }
  return h;
}

void EntailmentModel::validate() const {
  if (uses_wordpiece(mode) != wordpiece.has_value() || uses_char(mode) != chars.has_value()) {
    throw ContractError("backbones do not match fusion mode " + std::string(fusion_name(mode)));
  }
  if (wordpiece && wordpiece->front_end() != FrontEnd::kWordpiece) {
    throw ContractError("wordpiece slot holds a char backbone");
  }
  if (chars && chars->front_end() != FrontEnd::kChar) {
    throw ContractError("char slot holds a wordpiece backbone");
  }
  if (wordpiece && chars && wordpiece->config().d != chars->config().d) {
    throw DimensionError("backbone widths differ");
  }
  const std::size_t d = wordpiece ? wordpiece->config().d : chars->config().d;
  if (head.in_width() != fusion_width(mode, d) || head.out_width() != 2) {
    throw DimensionError("MLP head does not fit fusion mode " + std::string(fusion_name(mode)));
  }
  if (!alpha.defined() || alpha.numel() != 1) throw ContractError("alpha must be a scalar");
  auto check = [&](const HypothesisSet& hyps, FrontEnd fe) {
    for (const auto& p : hyps.prompts) {
      if (p && (p->backbone != fe || p->d() != d)) {
        throw ContractError("prompt does not belong to the " + std::string(front_end_name(fe)) +
                            " backbone");
      }
    }
  };
  check(wordpiece_hypotheses, FrontEnd::kWordpiece);
  check(char_hypotheses, FrontEnd::kChar);
}

std::vector<Tensor> EntailmentModel::trainable_parameters() const {
  std::vector<Tensor> out;
  if (wordpiece) {
    for (const Tensor& t : wordpiece->encoder_parameters()) out.push_back(t);
  }
  if (chars) {
    for (const Tensor& t : chars->encoder_parameters()) out.push_back(t);
  }
  for (const Tensor& t : head.parameters()) out.push_back(t);
  if (mode == FusionMode::kAdd || mode == FusionMode::kConcat) out.push_back(alpha);
  return out;
}

std::vector<Tensor> EntailmentModel::prompt_tensors() const {
  std::vector<Tensor> out;
  for (const HypothesisSet* hyps : {&wordpiece_hypotheses, &char_hypotheses}) {
    for (const auto& p : hyps->prompts) {
      if (p) out.push_back(p->h);
    }
  }
  return out;
}

EntailmentModel make_entailment_model(FusionMode mode, const Backbone* wordpiece,
                                      const Backbone* chars, HypothesisSet wordpiece_hyp,
                                      HypothesisSet char_hyp, double alpha_init,
                                      std::size_t max_seq, Rng& rng) {
  EntailmentModel m;
  m.mode = mode;
  if (uses_wordpiece(mode)) {
    if (wordpiece == nullptr) throw ConfigError("fusion mode needs a wordpiece backbone");
    m.wordpiece = wordpiece->clone();
    m.wordpiece_hypotheses = std::move(wordpiece_hyp);
  }
  if (uses_char(mode)) {
    if (chars == nullptr) throw ConfigError("fusion mode needs a char backbone");
    m.chars = chars->clone();
    m.char_hypotheses = std::move(char_hyp);
  }
  const std::size_t d = m.wordpiece ? m.wordpiece->config().d : m.chars->config().d;
  m.alpha = Tensor::filled({1, 1}, alpha_init);
  m.head = MlpHead::init(fusion_width(mode, d), 2, rng);
  m.max_seq = max_seq;
  m.validate();
  return m;
}

Tensor entailment_logits(const EntailmentModel& model, const Vocab& vocab,
                         std::string_view title, std::string_view entity, EntityClass cls) {
  std::optional<Tensor> v_bert, v_char;
  if (model.wordpiece) {
    v_bert = cls_for(*model.wordpiece, model.wordpiece_hypotheses, vocab, title, entity, cls,
                     model.max_seq);
  }
  if (model.chars) {
    v_char = cls_for(*model.chars, model.char_hypotheses, vocab, title, entity, cls,
                     model.max_seq);
  }
  Tensor fused = fuse(v_bert ? &*v_bert : nullptr, v_char ? &*v_char : nullptr, model.alpha,
                      model.mode);
  return model.head.forward(fused);
}

double entailment_probability(const EntailmentModel& model, const Vocab& vocab,
                              std::string_view title, std::string_view entity,
                              EntityClass cls) {
  Tensor p = ops::softmax_lastdim(entailment_logits(model, vocab, title, entity, cls));
  return p.values()[kEntailmentIndex];
}

EntityClass select_class(const std::array<double, kNumClasses>& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumClasses; ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return kAllClasses[best];
}

ClassPrediction predict_class(const EntailmentModel& model, const Vocab& vocab,
                              std::string_view title, std::string_view entity) {
  ClassPrediction out;
  for (EntityClass c : kAllClasses) {
    out.probabilities[class_index(c)] = entailment_probability(model, vocab, title, entity, c);
  }
  out.cls = select_class(out.probabilities);
  return out;
}

TrainHistory train_step2(EntailmentModel& model, const Vocab& vocab,
                         const std::vector<PairedExample>& pairs, const TrainConfig& config) {
  if (pairs.empty()) throw ConfigError("train_step2: no training pairs");
  model.validate();
  const std::vector<Tensor> prompts = model.prompt_tensors();
  set_trainable(prompts, false);
  const std::string before = checksum(prompts);
  TrainHistory history = fit(
      pairs, model.trainable_parameters(), config,
      [&](const PairedExample& p) {
        return entailment_logits(model, vocab, p.title, p.entity, p.hypothesis_class);
      },
      [](const PairedExample& p) -> std::size_t {
        return p.entailment ? kEntailmentIndex : 1 - kEntailmentIndex;
      });
  for (const Tensor& t : prompts) {
    if (t.has_grad()) throw InvariantError("train_step2: gradient reached a prompt matrix");
  }
  if (checksum(prompts) != before) {
    throw InvariantError("train_step2: prompt matrices changed during training");
  }
  return history;
}

BaselineModel make_baseline_model(const Backbone& wordpiece, std::size_t max_seq, Rng& rng) {
  if (wordpiece.front_end() != FrontEnd::kWordpiece) {
    throw ConfigError("the baseline runs on the wordpiece backbone");
  }
  BaselineModel m;
  m.wordpiece = wordpiece.clone();
  m.head = MlpHead::init(wordpiece.config().d, kNumClasses, rng);
  m.max_seq = max_seq;
  return m;
}

Tensor baseline_logits(const BaselineModel& model, const Vocab& vocab,
                       std::string_view title, std::string_view entity) {
  const Backbone& b = *model.wordpiece;
  FormattedInput in =
      format_input(title, entity, NoHypothesis{}, FrontEnd::kWordpiece, vocab, model.max_seq);
  Tensor states = b.encode(b.input_embeddings(in, nullptr), in.attention_mask());
  return model.head.forward(b.cls_vector(states));
}

TrainHistory train_baseline(BaselineModel& model, const Vocab& vocab,
                            const std::vector<Example>& examples, const TrainConfig& config) {
  if (examples.empty()) throw ConfigError("train_baseline: no training examples");
  std::vector<Tensor> params = model.wordpiece->encoder_parameters();
  for (const Tensor& t : model.head.parameters()) params.push_back(t);
  return fit(
      examples, params, config,
      [&](const Example& ex) { return baseline_logits(model, vocab, ex.title, ex.entity); },
      [](const Example& ex) { return class_index(ex.gold); });
}

EntityClass predict_baseline(const BaselineModel& model, const Vocab& vocab,
                             std::string_view title, std::string_view entity) {
  Tensor logits = baseline_logits(model, vocab, title, entity);
  std::array<double, kNumClasses> scores{};
  std::copy(logits.values().begin(), logits.values().end(), scores.begin());
  return select_class(scores);
}

void save_entailment_model(const std::filesystem::path& path, const EntailmentModel& model,
                           const std::vector<std::string>& prompt_refs) {
  model.validate();
  NamedArrays a;
  a.meta["kind"] = "entailment_model";
  a.meta["fusion"] = std::string(fusion_name(model.mode));
  a.meta["max_seq"] = std::to_string(model.max_seq);
  for (std::size_t i = 0; i < prompt_refs.size(); ++i) {
    a.meta["prompt_ref." + std::to_string(i)] = prompt_refs[i];
  }
  if (model.wordpiece) {
    nest(a, "wordpiece/", model.wordpiece->to_arrays());
    save_hypotheses(a, "wordpiece", model.wordpiece_hypotheses);
  }
  if (model.chars) {
    nest(a, "char/", model.chars->to_arrays());
    save_hypotheses(a, "char", model.char_hypotheses);
  }
  for (const auto& [n, t] : model.head.named_parameters()) a.add("head." + n, t);
  a.add("alpha", model.alpha);
  save_arrays(path, a);
}

EntailmentModel load_entailment_model(const std::filesystem::path& path) {
  const NamedArrays a = load_arrays(path);
  if (a.meta_value("kind") != "entailment_model") {
    throw DataError(path.string() + " is not an entailment model checkpoint");
  }
  EntailmentModel m;
  m.mode = parse_fusion(a.meta_value("fusion"));
  m.max_seq = meta_size(a, "max_seq");
  if (uses_wordpiece(m.mode)) {
    m.wordpiece = Backbone::from_arrays(unnest(a, "wordpiece/"));
    m.wordpiece_hypotheses = load_hypotheses(a, "wordpiece");
  }
  if (uses_char(m.mode)) {
    m.chars = Backbone::from_arrays(unnest(a, "char/"));
    m.char_hypotheses = load_hypotheses(a, "char");
  }
  m.head = head_from(a, "head.");
  m.alpha = a.get("alpha");
  try {
    m.validate();
  } catch (const ContractError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

void save_baseline_model(const std::filesystem::path& path, const BaselineModel& model) {
  NamedArrays a;
  a.meta["kind"] = "baseline_model";
  a.meta["max_seq"] = std::to_string(model.max_seq);
  nest(a, "wordpiece/", model.wordpiece->to_arrays());
  for (const auto& [n, t] : model.head.named_parameters()) a.add("head." + n, t);
  save_arrays(path, a);
}

BaselineModel load_baseline_model(const std::filesystem::path& path) {
  const NamedArrays a = load_arrays(path);
  if (a.meta_value("kind") != "baseline_model") {
    throw DataError(path.string() + " is not a baseline model checkpoint");
  }
  BaselineModel m;
  m.max_seq = meta_size(a, "max_seq");
  m.wordpiece = Backbone::from_arrays(unnest(a, "wordpiece/"));
  m.head = head_from(a, "head.");
  if (m.head.in_width() != m.wordpiece->config().d || m.head.out_width() != kNumClasses) {
    throw DataError(path.string() + ": baseline head does not fit its backbone");
  }
  return m;
}

}  // namespace ctm
