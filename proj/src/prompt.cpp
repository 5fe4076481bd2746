#include "ctm/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctm/errors.hpp"
#include "ctm/ops.hpp"
#include "ctm/optim.hpp"

namespace ctm {

namespace {

void check_class(EntityClass cls) {
  if (class_index(cls) >= kNumClasses) {
    throw ContractError("unknown entity class " + std::to_string(class_index(cls)));
  }
}

std::vector<FormattedInput> format_for_prompt(const std::vector<Example>& examples,
                                              const PromptMatrix& prompt,
                                              const Vocab& vocab, std::size_t max_seq) {
  std::vector<FormattedInput> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) {
    out.push_back(format_input(ex.title, ex.entity, PromptHypothesis{prompt.p()},
                               prompt.backbone, vocab, max_seq));
  }
  return out;
}

bool any_gradient(const std::vector<Tensor>& params) {
  return std::any_of(params.begin(), params.end(),
                     [](const Tensor& t) { return t.has_grad(); });
}

}  // namespace

std::string_view init_kind_name(InitKind kind) {
  return kind == InitKind::kLabels ? "label" : "dictionary";
}

InitKind parse_init_kind(std::string_view name) {
  if (name == "label" || name == "labels") return InitKind::kLabels;
  if (name == "dictionary") return InitKind::kDictionary;
  throw ConfigError("unknown prompt initialisation '" + std::string(name) + "'");
}

std::size_t prompt_length(InitKind kind) { return kind == InitKind::kLabels ? 3 : 14; }

std::string hypothesis_text(InitKind kind, EntityClass cls) {
  check_class(cls);
  if (kind == InitKind::kLabels) return "is a " + std::string(class_name(cls));
  switch (cls) {
    case EntityClass::kBrand:
      return "is a brand which is a type of things manufactured by a particular company";
    case EntityClass::kProduct:
      return "is a product which is an article or substance manufactured or refined for sale";
    case EntityClass::kFeature:
      return "is a feature which is a distinctive attribute or a special aspect of something";
  }
  throw ContractError("unreachable entity class");
}

PromptMatrix init_prompt(InitKind kind, EntityClass cls, const Backbone& backbone,
                         const Vocab& vocab) {
  check_class(cls);
  const std::size_t p = prompt_length(kind);
  TextUnits units = text_units(hypothesis_text(kind, cls), backbone.front_end(), vocab);
  units.ids.resize(std::min(units.ids.size(), p));
  units.tokens.resize(units.ids.size());
  std::vector<bool> reserved(units.ids.size(), false);
  while (units.ids.size() < p) {
    units.ids.push_back(kPadId);
    units.tokens.push_back(vocab.token(kPadId));
    reserved.push_back(true);
  }
  PromptMatrix m;
  m.cls = cls;
  m.backbone = backbone.front_end();
  m.init = kind;
  // Evaluated without a tape, then detached into an independent leaf.
  m.h = backbone.text_embeddings(units.ids, units.tokens, reserved).clone();
  m.h.set_requires_grad(false);
  return m;
}

void TuneConfig::validate() const {
  masking.validate();
  if (!(masking.rate > 0.0)) throw ConfigError("mask_rate must lie in (0, 1)");
  if (batch_size == 0) throw ConfigError("tune batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("tune learning_rate must be positive");
}

std::vector<std::size_t> maskable_positions(const FormattedInput& input) {
  const SequenceLayout& lay = input.layout;
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i <= lay.n; ++i) {
    if (!input.reserved[i]) out.push_back(i);
  }
  for (std::size_t i = lay.entity_begin(); i < lay.hypothesis_begin(); ++i) {
    if (!input.reserved[i]) out.push_back(i);
  }
  return out;
}

std::vector<MaskedInput> mask_batch(std::span<const FormattedInput> inputs,
                                    const TuneConfig& config, const Vocab& vocab,
                                    Rng& rng) {
  std::vector<MaskedInput> out;
  out.reserve(inputs.size());
  for (const FormattedInput& in : inputs) {
    out.push_back(mask_input(in, maskable_positions(in), config.masking, vocab, rng));
  }
  return out;
}

TuneResult tune_prompt(const Backbone& backbone, const std::vector<Example>& class_examples,
                       const PromptMatrix& init, const Vocab& vocab,
                       const TuneConfig& config) {
  config.validate();
  if (class_examples.empty()) {
    throw ConfigError("tune_prompt: no training examples for class " +
                      std::string(class_name(init.cls)));
  }
  if (init.backbone != backbone.front_end()) {
    throw ContractError("tune_prompt: prompt belongs to the " +
                        std::string(front_end_name(init.backbone)) + " backbone");
  }
  if (init.d() != backbone.config().d || init.p() != prompt_length(init.init)) {
    throw DimensionError("tune_prompt: prompt " + shape_string(init.h.shape()) +
                         " does not match the backbone or init kind");
  }
  for (const Example& ex : class_examples) {
    if (ex.gold != init.cls) {
      throw ContractError("tune_prompt: example of class " +
                          std::string(class_name(ex.gold)) + " in the " +
                          std::string(class_name(init.cls)) + " set");
    }
  }
  const std::vector<Tensor> frozen = backbone.parameters();
  for (const Tensor& t : frozen) {
    if (t.requires_grad()) throw ContractError("tune_prompt: backbone is not frozen");
  }
  const std::string before = backbone.checksum();

  const std::vector<FormattedInput> inputs =
      format_for_prompt(class_examples, init, vocab, config.max_seq);
  TuneResult result;
  result.prompt = init;
  result.prompt.h = init.h.clone();
  Tensor h = result.prompt.h;
  h.set_requires_grad(true);
  Adam adam({h}, AdamOptions{config.learning_rate});
  Rng rng(config.seed);

  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      TapeScope scope(tape);
      std::vector<Tensor> losses;
      for (std::size_t i = start; i < end; ++i) {
        const FormattedInput& in = inputs[order[i]];
        MaskedInput m = mask_input(in, maskable_positions(in), config.masking, vocab, rng);
        if (m.positions.empty()) continue;
        losses.push_back(mlm_loss(backbone, m, &h));
      }
      if (losses.empty()) continue;
      Tensor loss = ops::mean(ops::concat_rows(losses));
      total += loss.item();
      ++batches;
      tape.backward(loss);
      if (any_gradient(frozen)) {
        throw InvariantError("tune_prompt: gradient reached a frozen backbone parameter");
      }
      adam.step();
      adam.zero_grad();
    }
    result.loss_history.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  h.set_requires_grad(false);
  if (backbone.checksum() != before) {
    throw InvariantError("tune_prompt: backbone parameters changed while frozen");
  }
  return result;
}

double prompt_mlm_loss(const Backbone& backbone, const std::vector<Example>& examples,
                       const PromptMatrix& prompt, const Vocab& vocab,
                       const TuneConfig& config, std::uint64_t seed) {
  const std::vector<FormattedInput> inputs =
      format_for_prompt(examples, prompt, vocab, config.max_seq);
  Rng rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  for (const FormattedInput& in : inputs) {
    MaskedInput m = mask_input(in, maskable_positions(in), config.masking, vocab, rng);
    if (m.positions.empty()) continue;
    total += mlm_loss(backbone, m, &prompt.h).item();
    ++count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

NamedArrays prompt_to_arrays(const PromptMatrix& prompt) {
  NamedArrays a;
  a.meta["kind"] = "prompt";
  a.meta["class"] = std::string(class_name(prompt.cls));
  a.meta["backbone"] = std::string(front_end_name(prompt.backbone));
  a.meta["init"] = std::string(init_kind_name(prompt.init));
  a.meta["p"] = std::to_string(prompt.p());
  a.meta["d"] = std::to_string(prompt.d());
  a.add("h", prompt.h);
  return a;
}

PromptMatrix prompt_from_arrays(const NamedArrays& a) {
  if (a.meta_value("kind") != "prompt") throw DataError("checkpoint is not a prompt matrix");
  const auto cls = parse_class(a.meta_value("class"));
  if (!cls) throw DataError("prompt checkpoint has unknown class '" + a.meta_value("class") + "'");
  PromptMatrix m;
  m.cls = *cls;
  m.backbone = parse_front_end(a.meta_value("backbone"));
  m.init = parse_init_kind(a.meta_value("init"));
  m.h = a.get("h");
  if (m.h.shape().size() != 2 || m.p() != prompt_length(m.init) ||
      std::to_string(m.p()) != a.meta_value("p") || std::to_string(m.d()) != a.meta_value("d")) {
    throw DataError("prompt checkpoint shape " + shape_string(m.h.shape()) +
                    " disagrees with its metadata");
  }
  for (double v : m.h.values()) {
    if (!std::isfinite(v)) throw DataError("prompt checkpoint holds non-finite values");
  }
  return m;
}

void save_prompt(const std::filesystem::path& path, const PromptMatrix& prompt) {
  save_arrays(path, prompt_to_arrays(prompt));
}

PromptMatrix load_prompt(const std::filesystem::path& path) {
  return prompt_from_arrays(load_arrays(path));
}

}  // namespace ctm
