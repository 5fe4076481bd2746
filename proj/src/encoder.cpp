#include "ctm/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ctm/errors.hpp"
#include "ctm/ops.hpp"
#include "ctm/optim.hpp"

namespace ctm {

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor linear_weight(std::size_t in, std::size_t out, Rng& rng) {
  return normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ops::add(ops::matmul(x, w), b);
}

std::size_t meta_size(const NamedArrays& a, const std::string& key) {
  try {
    return static_cast<std::size_t>(std::stoull(a.meta_value(key)));
  } catch (const std::invalid_argument&) {
    throw DataError("checkpoint metadata '" + key + "' is not a number");
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("encoder width d=" + std::to_string(d) +
                      " must be a positive multiple of heads=" + std::to_string(heads));
  }
  if (ff_dim == 0 || max_seq == 0) throw ConfigError("ff_dim and max_seq must be positive");
  if (vocab_size <= kNumReservedTokens) throw ConfigError("vocab_size too small");
  if (char_dim == 0 || min_filter_width == 0 || max_filter_width < min_filter_width ||
      max_filter_width > kCharRowLength) {
    throw ConfigError("invalid character CNN settings");
  }
  if (d < max_filter_width - min_filter_width + 1) {
    throw ConfigError("d is too small to split across filter widths");
  }
}

std::vector<std::size_t> EncoderConfig::char_channels() const {
  const std::size_t widths = max_filter_width - min_filter_width + 1;
  std::vector<std::size_t> ch(widths, d / widths);
  for (std::size_t i = 0; i < d % widths; ++i) ++ch[i];
  return ch;
}

Backbone Backbone::init(FrontEnd front_end, const EncoderConfig& config, Rng& rng) {
  config.validate();
  Backbone b;
  b.front_end_ = front_end;
  b.config_ = config;
  const std::size_t d = config.d;
  if (front_end == FrontEnd::kWordpiece) {
    b.token_table_ = normal_tensor({config.vocab_size, d}, 0.02, rng);
    b.mlm_output_ = b.token_table_;
  } else {
    b.char_table_ = normal_tensor({config.char_alphabet_size, config.char_dim}, 0.5, rng);
    const auto channels = config.char_channels();
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const std::size_t width = config.min_filter_width + i;
      b.conv_filters_.push_back(linear_weight(width * config.char_dim, channels[i], rng));
      b.conv_biases_.push_back(Tensor::zeros({1, channels[i]}));
    }
    for (int i = 0; i < 2; ++i) {
      // Negative gate bias starts the highway close to the carry path.
      b.highway_.push_back({linear_weight(d, d, rng), Tensor::zeros({1, d}),
                            linear_weight(d, d, rng), Tensor::filled({1, d}, -1.0)});
    }
    b.proj_w_ = linear_weight(d, d, rng);
    b.proj_b_ = Tensor::zeros({1, d});
    b.special_table_ = normal_tensor({kNumReservedTokens, d}, 0.02, rng);
    b.mlm_output_ = normal_tensor({config.vocab_size, d}, 0.02, rng);
  }
  b.position_table_ = normal_tensor({config.max_seq, d}, 0.02, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    Layer layer;
    layer.ln1_g = Tensor::filled({1, d}, 1.0);
    layer.ln1_b = Tensor::zeros({1, d});
    layer.wq = linear_weight(d, d, rng);
    layer.bq = Tensor::zeros({1, d});
    layer.wk = linear_weight(d, d, rng);
    layer.bk = Tensor::zeros({1, d});
    layer.wv = linear_weight(d, d, rng);
    layer.bv = Tensor::zeros({1, d});
    layer.wo = linear_weight(d, d, rng);
    layer.bo = Tensor::zeros({1, d});
    layer.ln2_g = Tensor::filled({1, d}, 1.0);
    layer.ln2_b = Tensor::zeros({1, d});
    layer.w1 = linear_weight(d, config.ff_dim, rng);
    layer.b1 = Tensor::zeros({1, config.ff_dim});
    layer.w2 = linear_weight(config.ff_dim, d, rng);
    layer.b2 = Tensor::zeros({1, d});
    b.layers_.push_back(std::move(layer));
  }
  b.final_ln_g_ = Tensor::filled({1, d}, 1.0);
  b.final_ln_b_ = Tensor::zeros({1, d});
  b.mlm_bias_ = Tensor::zeros({1, config.vocab_size});
  return b;
}

Tensor Backbone::char_word_vectors(std::span<const CharRow> rows) const {
  std::vector<int> ids;
  ids.reserve(rows.size() * kCharRowLength);
  for (const CharRow& r : rows) ids.insert(ids.end(), r.begin(), r.end());
  std::vector<Tensor> pooled;
  for (std::size_t i = 0; i < conv_filters_.size(); ++i) {
    const std::size_t width = config_.min_filter_width + i;
    pooled.push_back(ops::relu(ops::char_conv_maxpool(
        char_table_, ids, kCharRowLength, conv_filters_[i], conv_biases_[i], width)));
  }
  Tensor x = ops::concat_cols(pooled);
  for (const Highway& hw : highway_) {
    Tensor gate = ops::sigmoid(linear(x, hw.wg, hw.bg));
    Tensor h = ops::relu(linear(x, hw.wh, hw.bh));
    x = ops::add(x, ops::mul(gate, ops::sub(h, x)));
  }
  return linear(x, proj_w_, proj_b_);
}

Tensor Backbone::text_embeddings(std::span<const int> ids,
                                 std::span<const std::string> tokens,
                                 const std::vector<bool>& reserved) const {
  if (front_end_ == FrontEnd::kWordpiece) {
    return ops::embedding_lookup(token_table_, ids);
  }
  if (tokens.size() != ids.size() || reserved.size() != ids.size()) {
    throw ContractError("text_embeddings: ids, tokens and flags differ in length");
  }
  // Each distinct word goes through the CNN once.
  std::map<std::string, std::size_t> unique;
  std::vector<CharRow> rows;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (reserved[i]) continue;
    if (unique.emplace(tokens[i], rows.size()).second) {
      rows.push_back(encode_chars(tokens[i]));
    }
  }
  std::vector<std::size_t> select;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (reserved[i]) {
      if (ids[i] < 0 || ids[i] >= kNumReservedTokens) {
        throw IndexError("reserved token id " + std::to_string(ids[i]) + " out of range");
      }
      select.push_back(rows.size() + static_cast<std::size_t>(ids[i]));
    } else {
      select.push_back(unique.at(tokens[i]));
    }
  }
  if (rows.empty()) return ops::row_select(special_table_, select);
  std::vector<Tensor> parts = {char_word_vectors(rows), special_table_};
  return ops::row_select(ops::concat_rows(parts), select);
}

Tensor Backbone::unit_embeddings(const FormattedInput& input) const {
  if (input.front_end != front_end_) {
    throw ContractError("input formatted for the " +
                        std::string(front_end_name(input.front_end)) +
                        " front-end given to a " +
                        std::string(front_end_name(front_end_)) + " backbone");
  }
  return text_embeddings(input.ids, input.tokens, input.reserved);
}

Tensor Backbone::embed_wordpiece(std::span<const int> ids) const {
  if (front_end_ != FrontEnd::kWordpiece) {
    throw ContractError("embed_wordpiece on a char backbone");
  }
  if (ids.size() > config_.max_seq) {
    throw LengthError("sequence of " + std::to_string(ids.size()) +
                      " exceeds max_seq " + std::to_string(config_.max_seq));
  }
  return add_positions(ops::embedding_lookup(token_table_, ids));
}

Tensor Backbone::embed_chars(std::span<const CharRow> rows) const {
  if (front_end_ != FrontEnd::kChar) throw ContractError("embed_chars on a wordpiece backbone");
  if (rows.size() > config_.max_seq) {
    throw LengthError("sequence of " + std::to_string(rows.size()) +
                      " exceeds max_seq " + std::to_string(config_.max_seq));
  }
  return add_positions(char_word_vectors(rows));
}

Tensor Backbone::add_positions(const Tensor& x) const {
  const std::size_t t = x.rows();
  if (t > config_.max_seq) {
    throw LengthError("sequence of " + std::to_string(t) + " exceeds max_seq " +
                      std::to_string(config_.max_seq));
  }
  if (x.cols() != config_.d) {
    throw DimensionError("add_positions: width " + std::to_string(x.cols()) +
                         " != d " + std::to_string(config_.d));
  }
  std::vector<std::size_t> idx(t);
  std::iota(idx.begin(), idx.end(), 0);
  return ops::add(x, ops::row_select(position_table_, idx));
}

Tensor Backbone::input_embeddings(const FormattedInput& input, const Tensor* prompt) const {
  if (input.length() > config_.max_seq) {
    throw LengthError("input of length " + std::to_string(input.length()) +
                      " exceeds max_seq " + std::to_string(config_.max_seq));
  }
  Tensor units = unit_embeddings(input);
  if (prompt == nullptr) return add_positions(units);
  const SequenceLayout& lay = input.layout;
  if (!input.prompt_slot || prompt->rows() != lay.p || prompt->cols() != config_.d) {
    throw DimensionError("prompt " + shape_string(prompt->shape()) +
                         " does not fit a hypothesis slot of " + std::to_string(lay.p) +
                         " rows x d=" + std::to_string(config_.d));
  }
  std::vector<Tensor> parts;
  const std::size_t begin = lay.hypothesis_begin();
  std::vector<std::size_t> head(begin);
  std::iota(head.begin(), head.end(), 0);
  parts.push_back(ops::row_select(units, head));
  parts.push_back(*prompt);
  if (input.length() > begin + lay.p) {
    std::vector<std::size_t> tail(input.length() - begin - lay.p);
    std::iota(tail.begin(), tail.end(), begin + lay.p);
    parts.push_back(ops::row_select(units, tail));
  }
  return add_positions(ops::concat_rows(parts));
}

Tensor Backbone::attention(const Layer& layer, const Tensor& h,
                           const std::vector<bool>& mask,
                           std::vector<Tensor>* probs) const {
  const std::size_t dh = config_.d / config_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = linear(h, layer.wq, layer.bq);
  Tensor k = linear(h, layer.wk, layer.bk);
  Tensor v = linear(h, layer.wv, layer.bv);
  std::vector<Tensor> heads;
  for (std::size_t i = 0; i < config_.heads; ++i) {
    Tensor qh = ops::slice_cols(q, i * dh, dh);
    Tensor kh = ops::slice_cols(k, i * dh, dh);
    Tensor vh = ops::slice_cols(v, i * dh, dh);
    Tensor p = ops::masked_softmax(ops::scale(ops::matmul_nt(qh, kh), inv_sqrt), mask, mask);
    if (probs) probs->push_back(p);
    heads.push_back(ops::matmul(p, vh));
  }
  return linear(ops::concat_cols(heads), layer.wo, layer.bo);
}

Tensor Backbone::encode(const Tensor& x, const std::vector<bool>& mask) const {
  if (mask.size() != x.rows()) {
    throw ContractError("encode: mask of length " + std::to_string(mask.size()) +
                        " for input " + shape_string(x.shape()));
  }
  if (x.cols() != config_.d) {
    throw DimensionError("encode: input width " + std::to_string(x.cols()) +
                         " != d " + std::to_string(config_.d));
  }
  Tensor h = x;
  for (const Layer& layer : layers_) {
    h = ops::add(h, attention(layer, ops::layer_norm(h, layer.ln1_g, layer.ln1_b), mask, nullptr));
    Tensor f = ops::layer_norm(h, layer.ln2_g, layer.ln2_b);
    f = linear(ops::gelu(linear(f, layer.w1, layer.b1)), layer.w2, layer.b2);
    h = ops::add(h, f);
  }
  return h;
}

Tensor Backbone::attention_probs(const Tensor& x, const std::vector<bool>& mask,
                                 std::size_t layer, std::size_t head) const {
  if (layer >= layers_.size() || head >= config_.heads) {
    throw IndexError("attention_probs: no layer " + std::to_string(layer) +
                     " head " + std::to_string(head));
  }
  Tensor h = x;
  for (std::size_t l = 0;; ++l) {
    const Layer& ly = layers_[l];
    std::vector<Tensor> probs;
    Tensor a = attention(ly, ops::layer_norm(h, ly.ln1_g, ly.ln1_b), mask, &probs);
    if (l == layer) return probs[head];
    h = ops::add(h, a);
    Tensor f = ops::layer_norm(h, ly.ln2_g, ly.ln2_b);
    h = ops::add(h, linear(ops::gelu(linear(f, ly.w1, ly.b1)), ly.w2, ly.b2));
  }
}

Tensor Backbone::cls_vector(const Tensor& states) const {
  const std::size_t zero = 0;
  return ops::layer_norm(ops::row_select(states, std::span(&zero, 1)), final_ln_g_,
                         final_ln_b_);
}

Tensor Backbone::mlm_logits(const Tensor& states,
                            std::span<const std::size_t> positions) const {
  for (std::size_t p : positions) {
    if (p >= states.rows()) {
      throw IndexError("mlm_logits: position " + std::to_string(p) +
                       " outside sequence of " + std::to_string(states.rows()));
    }
  }
  Tensor h = ops::layer_norm(ops::row_select(states, positions), final_ln_g_, final_ln_b_);
  return ops::add(ops::matmul_nt(h, mlm_output_), mlm_bias_);
}

void Backbone::for_each_parameter(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  if (front_end_ == FrontEnd::kWordpiece) {
    fn("token_table", token_table_);
  } else {
    fn("char_table", char_table_);
    for (std::size_t i = 0; i < conv_filters_.size(); ++i) {
      const std::string w = std::to_string(config_.min_filter_width + i);
      fn("conv." + w + ".filters", conv_filters_[i]);
      fn("conv." + w + ".bias", conv_biases_[i]);
    }
    for (std::size_t i = 0; i < highway_.size(); ++i) {
      const std::string p = "highway." + std::to_string(i) + ".";
      fn(p + "wh", highway_[i].wh);
      fn(p + "bh", highway_[i].bh);
      fn(p + "wg", highway_[i].wg);
      fn(p + "bg", highway_[i].bg);
    }
    fn("proj_w", proj_w_);
    fn("proj_b", proj_b_);
    fn("special_table", special_table_);
  }
  fn("position_table", position_table_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& ly = layers_[l];
    const std::string p = "layer." + std::to_string(l) + ".";
    fn(p + "ln1_g", ly.ln1_g);
    fn(p + "ln1_b", ly.ln1_b);
    fn(p + "wq", ly.wq);
    fn(p + "bq", ly.bq);
    fn(p + "wk", ly.wk);
    fn(p + "bk", ly.bk);
    fn(p + "wv", ly.wv);
    fn(p + "bv", ly.bv);
    fn(p + "wo", ly.wo);
    fn(p + "bo", ly.bo);
    fn(p + "ln2_g", ly.ln2_g);
    fn(p + "ln2_b", ly.ln2_b);
    fn(p + "w1", ly.w1);
    fn(p + "b1", ly.b1);
    fn(p + "w2", ly.w2);
    fn(p + "b2", ly.b2);
  }
  fn("final_ln_g", final_ln_g_);
  fn("final_ln_b", final_ln_b_);
  if (front_end_ == FrontEnd::kChar) fn("mlm_output", mlm_output_);
  fn("mlm_bias", mlm_bias_);
}

std::vector<std::pair<std::string, Tensor>> Backbone::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for_each_parameter([&](const std::string& n, const Tensor& t) { out.emplace_back(n, t); });
  return out;
}

std::vector<Tensor> Backbone::parameters() const {
  std::vector<Tensor> out;
  for_each_parameter([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

std::vector<Tensor> Backbone::encoder_parameters() const {
  std::vector<Tensor> out;
  for_each_parameter([&](const std::string& n, const Tensor& t) {
    if (n != "mlm_output" && n != "mlm_bias") out.push_back(t);
  });
  return out;
}

void Backbone::set_requires_grad(bool on) {
  for (Tensor t : parameters()) t.set_requires_grad(on);
}

std::string Backbone::checksum() const {
  const auto params = parameters();
  return ctm::checksum(params);
}

NamedArrays Backbone::to_arrays() const {
  NamedArrays a;
  a.meta["kind"] = "backbone";
  a.meta["front_end"] = std::string(front_end_name(front_end_));
  a.meta["d"] = std::to_string(config_.d);
  a.meta["layers"] = std::to_string(config_.layers);
  a.meta["heads"] = std::to_string(config_.heads);
  a.meta["ff_dim"] = std::to_string(config_.ff_dim);
  a.meta["max_seq"] = std::to_string(config_.max_seq);
  a.meta["vocab_size"] = std::to_string(config_.vocab_size);
  a.meta["char_alphabet_size"] = std::to_string(config_.char_alphabet_size);
  a.meta["char_dim"] = std::to_string(config_.char_dim);
  a.meta["min_filter_width"] = std::to_string(config_.min_filter_width);
  a.meta["max_filter_width"] = std::to_string(config_.max_filter_width);
  for_each_parameter([&](const std::string& n, const Tensor& t) { a.add(n, t); });
  return a;
}

Backbone Backbone::from_arrays(const NamedArrays& a) {
  if (a.meta_value("kind") != "backbone") throw DataError("checkpoint is not a backbone");
  EncoderConfig cfg;
  cfg.d = meta_size(a, "d");
  cfg.layers = meta_size(a, "layers");
  cfg.heads = meta_size(a, "heads");
  cfg.ff_dim = meta_size(a, "ff_dim");
  cfg.max_seq = meta_size(a, "max_seq");
  cfg.vocab_size = meta_size(a, "vocab_size");
  cfg.char_alphabet_size = meta_size(a, "char_alphabet_size");
  cfg.char_dim = meta_size(a, "char_dim");
  cfg.min_filter_width = meta_size(a, "min_filter_width");
  cfg.max_filter_width = meta_size(a, "max_filter_width");
  // Build a skeleton with the right structure, then swap in stored arrays.
  Rng rng(0);
  Backbone b = init(parse_front_end(a.meta_value("front_end")), cfg, rng);
  std::map<std::string, Tensor> stored(a.arrays.begin(), a.arrays.end());
  auto take = [&](const std::string& name, Tensor& slot) {
    auto it = stored.find(name);
    if (it == stored.end()) throw DataError("backbone checkpoint lacks '" + name + "'");
    if (it->second.shape() != slot.shape()) {
      throw DataError("backbone array '" + name + "' has shape " +
                      shape_string(it->second.shape()) + ", expected " +
                      shape_string(slot.shape()));
    }
    slot = it->second;
  };
  if (b.front_end_ == FrontEnd::kWordpiece) {
    take("token_table", b.token_table_);
    b.mlm_output_ = b.token_table_;
  } else {
    take("char_table", b.char_table_);
    for (std::size_t i = 0; i < b.conv_filters_.size(); ++i) {
      const std::string w = std::to_string(cfg.min_filter_width + i);
      take("conv." + w + ".filters", b.conv_filters_[i]);
      take("conv." + w + ".bias", b.conv_biases_[i]);
    }
    for (std::size_t i = 0; i < b.highway_.size(); ++i) {
      const std::string p = "highway." + std::to_string(i) + ".";
      take(p + "wh", b.highway_[i].wh);
      take(p + "bh", b.highway_[i].bh);
      take(p + "wg", b.highway_[i].wg);
      take(p + "bg", b.highway_[i].bg);
    }
    take("proj_w", b.proj_w_);
    take("proj_b", b.proj_b_);
    take("special_table", b.special_table_);
    take("mlm_output", b.mlm_output_);
  }
  take("position_table", b.position_table_);
  for (std::size_t l = 0; l < b.layers_.size(); ++l) {
    Layer& ly = b.layers_[l];
    const std::string p = "layer." + std::to_string(l) + ".";
    take(p + "ln1_g", ly.ln1_g);
    take(p + "ln1_b", ly.ln1_b);
    take(p + "wq", ly.wq);
    take(p + "bq", ly.bq);
    take(p + "wk", ly.wk);
    take(p + "bk", ly.bk);
    take(p + "wv", ly.wv);
    take(p + "bv", ly.bv);
    take(p + "wo", ly.wo);
    take(p + "bo", ly.bo);
    take(p + "ln2_g", ly.ln2_g);
    take(p + "ln2_b", ly.ln2_b);
    take(p + "w1", ly.w1);
    take(p + "b1", ly.b1);
    take(p + "w2", ly.w2);
    take(p + "b2", ly.b2);
  }
  take("final_ln_g", b.final_ln_g_);
  take("final_ln_b", b.final_ln_b_);
  take("mlm_bias", b.mlm_bias_);
  return b;
}

void Backbone::save(const std::filesystem::path& path) const { save_arrays(path, to_arrays()); }

Backbone Backbone::load(const std::filesystem::path& path) {
  return from_arrays(load_arrays(path));
}

Backbone Backbone::clone() const {
  NamedArrays a = to_arrays();
  for (auto& [name, t] : a.arrays) t = t.clone();
  Backbone b = from_arrays(a);
  for (auto& [name, t] : a.arrays) t.set_requires_grad(false);
  return b;
}

// ---------------------------------------------------------------------------
// Masked language modelling

void MaskingRecipe::validate() const {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("mask_rate must lie in [0, 1)");
  if (replace < 0.0 || keep < 0.0 || random < 0.0 ||
      std::abs(replace + keep + random - 1.0) > 1e-9) {
    throw ConfigError("mask split replace/keep/random must be non-negative and sum to 1");
  }
}

std::vector<std::size_t> text_positions(const FormattedInput& input) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < input.length(); ++i) {
    if (!input.reserved[i]) out.push_back(i);
  }
  return out;
}

MaskedInput mask_input(const FormattedInput& input, std::span<const std::size_t> eligible,
                       const MaskingRecipe& recipe, const Vocab& vocab, Rng& rng) {
  MaskedInput m{input, {}, {}};
  const auto& words = vocab.word_ids();
  for (std::size_t pos : eligible) {
    if (pos >= input.length()) throw IndexError("mask_input: position out of range");
    if (!rng.bernoulli(recipe.rate)) continue;
    m.positions.push_back(pos);
    m.targets.push_back(input.ids[pos]);
    const double u = rng.uniform();
    if (u < recipe.replace) {
      m.input.ids[pos] = kMaskId;
      m.input.tokens[pos] = vocab.token(kMaskId);
      m.input.reserved[pos] = true;
    } else if (u < recipe.replace + recipe.keep) {
      // unchanged
    } else {
      int id;
      if (input.front_end == FrontEnd::kWordpiece) {
        id = kNumReservedTokens +
             static_cast<int>(rng.index(vocab.size() - kNumReservedTokens));
      } else {
        id = words[rng.index(words.size())];
      }
      m.input.ids[pos] = id;
      m.input.tokens[pos] = vocab.token(id);
      m.input.reserved[pos] = false;
    }
  }
  return m;
}

Tensor mlm_loss(const Backbone& backbone, const MaskedInput& masked, const Tensor* prompt) {
  if (masked.positions.empty()) return Tensor::scalar(0.0);
  Tensor x = backbone.input_embeddings(masked.input, prompt);
  Tensor states = backbone.encode(x, masked.input.attention_mask());
  Tensor logits = backbone.mlm_logits(states, masked.positions);
  std::vector<std::size_t> targets(masked.targets.begin(), masked.targets.end());
  return ops::cross_entropy_with_logits(logits, targets);
}

namespace {

// Mean of the scalar losses, skipping constant (empty-mask) entries.
Tensor mean_loss(const std::vector<Tensor>& losses) {
  return ops::mean(ops::concat_rows(losses));
}

}  // namespace

PretrainResult pretrain_mlm(Backbone& backbone, const std::vector<FormattedInput>& corpus,
                            const Vocab& vocab, const PretrainConfig& config, Rng& rng) {
  if (corpus.empty()) throw ConfigError("pretrain_mlm: empty corpus");
  if (config.batch_size == 0) throw ConfigError("pretrain_mlm: batch_size must be positive");
  config.masking.validate();
  if (vocab.size() != backbone.config().vocab_size) {
    throw ConfigError("pretrain_mlm: vocabulary size does not match the backbone");
  }

  std::vector<Tensor> params = backbone.parameters();
  backbone.set_requires_grad(!config.freeze_all);
  Adam adam(params, AdamOptions{config.learning_rate},
            std::vector<bool>(params.size(), config.freeze_all));

  Rng probe_rng = rng.split(0x70726f6265);
  std::vector<MaskedInput> probe;
  for (std::size_t i = 0; i < std::min(config.probe_size, corpus.size()); ++i) {
    MaskedInput m = mask_input(corpus[i], text_positions(corpus[i]), config.masking, vocab, probe_rng);
    if (!m.positions.empty()) probe.push_back(std::move(m));
  }
  auto probe_loss = [&] {
    double total = 0.0;
    for (const MaskedInput& m : probe) total += mlm_loss(backbone, m).item();
    return probe.empty() ? 0.0 : total / static_cast<double>(probe.size());
  };

  PretrainResult result;
  result.loss_history.push_back(probe_loss());
  Rng train_rng = rng.split(1);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    train_rng.shuffle(order.begin(), order.end());
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      TapeScope scope(tape);
      std::vector<Tensor> losses;
      for (std::size_t i = start; i < end; ++i) {
        const FormattedInput& in = corpus[order[i]];
        MaskedInput m = mask_input(in, text_positions(in), config.masking, vocab, train_rng);
        if (m.positions.empty()) continue;
        losses.push_back(mlm_loss(backbone, m));
      }
      if (losses.empty()) continue;
      Tensor loss = mean_loss(losses);
      epoch_total += loss.item();
      ++batches;
      if (loss.requires_grad()) {
        tape.backward(loss);
        adam.step();
      }
      adam.zero_grad();
    }
    result.train_loss.push_back(batches ? epoch_total / static_cast<double>(batches) : 0.0);
    result.loss_history.push_back(probe_loss());
  }
  backbone.set_requires_grad(false);
  return result;
}

}  // namespace ctm
