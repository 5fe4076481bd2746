#pragma once

// Central finite-difference gradient checks shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ctm/classify.hpp"
#include "ctm/encoder.hpp"
#include "ctm/ops.hpp"
#include "ctm/rng.hpp"
#include "ctm/tensor.hpp"

namespace ctm::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kRelTol = 1e-4;
inline constexpr double kAbsTol = 1e-7;

struct CheckResult {
  std::size_t coordinates = 0;
  std::size_t failures = 0;
  double worst_rel = 0.0;
  std::string first_failure;

  bool ok() const { return coordinates > 0 && failures == 0; }
  void merge(const CheckResult& o) {
    coordinates += o.coordinates;
    failures += o.failures;
    worst_rel = std::max(worst_rel, o.worst_rel);
    if (first_failure.empty()) first_failure = o.first_failure;
  }
};

inline bool grad_close(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= kAbsTol) return true;
  return diff <= kRelTol * std::max(std::abs(analytic), std::abs(numeric));
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, scale);
  return Tensor::from(std::move(shape), std::move(v));
}

// Reduces any output to a scalar with fixed random weights so every output
// entry contributes a distinct amount to the loss.
inline Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(out.shape(), rng);
  return ops::sum(ops::mul(out, w));
}

// Compares the tape gradient of `loss_fn` against central differences for
// `params`. At most `max_coords` coordinates per tensor are probed (chosen
// at random when the tensor is larger).
inline CheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                   std::vector<Tensor> params, Rng& rng,
                                   std::size_t max_coords = 64) {
  for (Tensor& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  CheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    std::vector<std::size_t> coords(p.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      auto values = p.mutable_values();
      const double saved = values[i];
      values[i] = saved + kFdStep;
      const double up = loss_fn().item();
      values[i] = saved - kFdStep;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * kFdStep);
      ++result.coordinates;
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
      const double rel = std::abs(analytic[i] - numeric) / scale;
      if (!grad_close(analytic[i], numeric)) {
        ++result.failures;
        result.worst_rel = std::max(result.worst_rel, rel);
        if (result.first_failure.empty()) {
          result.first_failure = "param " + std::to_string(pi) + " coord " + std::to_string(i) +
                                 ": analytic " + std::to_string(analytic[i]) + " numeric " +
                                 std::to_string(numeric);
        }
      }
    }
  }
  for (Tensor& p : params) {
    p.clear_grad();
    p.set_requires_grad(false);
  }
  return result;
}

// One named family of gradient checks; `run(instance)` performs one random
// instance.
struct GradCase {
  std::string name;
  std::function<CheckResult(std::uint64_t instance)> run;
};

inline constexpr std::size_t kInstancesPerCase = 20;

// Sequence of positive numbers away from zero, for log-like ops and kinks.
inline Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (double& x : t.mutable_values()) x += x >= 0 ? 0.05 : -0.05;
  return t;
}

inline EncoderConfig tiny_encoder(std::size_t vocab_size) {
  EncoderConfig c;
  c.d = 10;
  c.layers = 1;
  c.heads = 2;
  c.ff_dim = 12;
  c.max_seq = 24;
  c.vocab_size = vocab_size;
  c.char_dim = 4;
  return c;
}

inline Vocab tiny_vocab() {
  const std::vector<std::string> corpus = {
      "nike hoodie black", "zebra gel pen 0.7 mm", "is a brand", "is a product",
      "is a feature", "nagano set of 2 chairs"};
  return Vocab::build(corpus, 120, 1);
}

inline std::vector<GradCase> primitive_cases() {
  std::vector<GradCase> cases;
  auto simple = [&](std::string name, std::function<Tensor(std::vector<Tensor>&)> f,
                    std::function<std::vector<Tensor>(Rng&)> make) {
    cases.push_back({std::move(name), [f, make](std::uint64_t inst) {
                       Rng rng(1000 + inst);
                       std::vector<Tensor> in = make(rng);
                       auto loss = [&] { return weighted_sum(f(in), 77 + inst); };
                       return check_gradients(loss, in, rng);
                     }});
  };
  auto dims = [](Rng& rng) { return 2 + rng.index(3); };

  simple("matmul", [](auto& in) { return ops::matmul(in[0], in[1]); }, [&](Rng& r) {
    const std::size_t a = dims(r), b = dims(r), c = dims(r);
    return std::vector<Tensor>{random_tensor({a, b}, r), random_tensor({b, c}, r)};
  });
  simple("matmul_nt", [](auto& in) { return ops::matmul_nt(in[0], in[1]); }, [&](Rng& r) {
    const std::size_t a = dims(r), b = dims(r), c = dims(r);
    return std::vector<Tensor>{random_tensor({a, b}, r), random_tensor({c, b}, r)};
  });
  simple("transpose", [](auto& in) { return ops::transpose(in[0]); }, [&](Rng& r) {
    return std::vector<Tensor>{random_tensor({dims(r), dims(r)}, r)};
  });
  simple("add", [](auto& in) { return ops::add(in[0], in[1]); }, [&](Rng& r) {
    const std::size_t a = dims(r), b = dims(r);
    return std::vector<Tensor>{random_tensor({a, b}, r), random_tensor({a, b}, r)};
  });
  simple("add_broadcast", [](auto& in) { return ops::add(in[0], in[1]); }, [&](Rng& r) {
    const std::size_t a = dims(r), b = dims(r);
    return std::vector<Tensor>{random_tensor({a, b}, r), random_tensor({1, b}, r)};
  });
  simple("sub", [](auto& in) { return ops::sub(in[0], in[1]); }, [&](Rng& r) {
    const std::size_t a = dims(r), b = dims(r);
    return std::vector<Tensor>{random_tensor({a, b}, r), random_tensor({a, b}, r)};
  });
  simple("mul", [](auto& in) { return ops::mul(in[0], in[1]); }, [&](Rng& r) {
    const std::size_t a = dims(r), b = dims(r);
    return std::vector<Tensor>{random_tensor({a, b}, r), random_tensor({a, b}, r)};
  });
  simple("scale", [](auto& in) { return ops::scale(in[0], -1.7); }, [&](Rng& r) {
    return std::vector<Tensor>{random_tensor({dims(r), dims(r)}, r)};
  });
  simple("scale_by", [](auto& in) { return ops::scale_by(in[0], in[1]); }, [&](Rng& r) {
    return std::vector<Tensor>{random_tensor({dims(r), dims(r)}, r), random_tensor({1, 1}, r)};
  });
  simple("concat_rows",
         [](auto& in) {
           const std::vector<Tensor> parts = {in[0], in[1]};
           return ops::concat_rows(parts);
         },
         [&](Rng& r) {
           const std::size_t c = dims(r);
           return std::vector<Tensor>{random_tensor({dims(r), c}, r), random_tensor({dims(r), c}, r)};
         });
  simple("concat_cols",
         [](auto& in) {
           const std::vector<Tensor> parts = {in[0], in[1]};
           return ops::concat_cols(parts);
         },
         [&](Rng& r) {
           const std::size_t rows = dims(r);
           return std::vector<Tensor>{random_tensor({rows, dims(r)}, r),
                                      random_tensor({rows, dims(r)}, r)};
         });
  simple("slice_cols", [](auto& in) { return ops::slice_cols(in[0], 1, 2); }, [&](Rng& r) {
    return std::vector<Tensor>{random_tensor({dims(r), 4}, r)};
  });
  simple("row_select",
         [](auto& in) {
           const std::vector<std::size_t> rows = {1, 0, 1};
           return ops::row_select(in[0], rows);
         },
         [&](Rng& r) { return std::vector<Tensor>{random_tensor({dims(r), dims(r)}, r)}; });
  simple("embedding_lookup",
         [](auto& in) {
           const std::vector<int> ids = {2, 0, 2, 1};
           return ops::embedding_lookup(in[0], ids);
         },
         [&](Rng& r) { return std::vector<Tensor>{random_tensor({3, dims(r)}, r)}; });
  simple("softmax_lastdim", [](auto& in) { return ops::softmax_lastdim(in[0]); }, [&](Rng& r) {
    return std::vector<Tensor>{random_tensor({dims(r), dims(r)}, r)};
  });
  simple("masked_softmax",
         [](auto& in) {
           return ops::masked_softmax(in[0], {true, false, true, true}, {true, true, false});
         },
         [&](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r)}; });
  simple("layer_norm", [](auto& in) { return ops::layer_norm(in[0], in[1], in[2]); },
         [&](Rng& r) {
           const std::size_t c = 3 + r.index(4);
           return std::vector<Tensor>{random_tensor({dims(r), c}, r), random_tensor({1, c}, r),
                                      random_tensor({1, c}, r)};
         });
  simple("relu", [](auto& in) { return ops::relu(in[0]); }, [&](Rng& r) {
    return std::vector<Tensor>{away_from_zero({dims(r), dims(r)}, r)};
  });
  simple("gelu", [](auto& in) { return ops::gelu(in[0]); }, [&](Rng& r) {
    return std::vector<Tensor>{random_tensor({dims(r), dims(r)}, r)};
  });
  simple("sigmoid", [](auto& in) { return ops::sigmoid(in[0]); }, [&](Rng& r) {
    return std::vector<Tensor>{random_tensor({dims(r), dims(r)}, r)};
  });
  simple("sum", [](auto& in) { return ops::sum(in[0]); }, [&](Rng& r) {
    return std::vector<Tensor>{random_tensor({dims(r), dims(r)}, r)};
  });
  simple("mean", [](auto& in) { return ops::mean(in[0]); }, [&](Rng& r) {
    return std::vector<Tensor>{random_tensor({dims(r), dims(r)}, r)};
  });
  cases.push_back({"cross_entropy_with_logits", [](std::uint64_t inst) {
                     Rng rng(5000 + inst);
                     const std::size_t rows = 2 + rng.index(3), cols = 2 + rng.index(3);
                     std::vector<Tensor> in = {random_tensor({rows, cols}, rng)};
                     std::vector<std::size_t> targets(rows);
                     for (auto& t : targets) t = rng.index(cols);
                     auto loss = [&] { return ops::cross_entropy_with_logits(in[0], targets); };
                     return check_gradients(loss, in, rng);
                   }});
  cases.push_back({"char_conv_maxpool", [](std::uint64_t inst) {
                     Rng rng(6000 + inst);
                     const std::size_t width = 1 + rng.index(3), dim = 3, k = 2, row = 7;
                     const std::size_t tokens = 2;
                     std::vector<int> ids(tokens * row, 0);
                     for (std::size_t t = 0; t < tokens; ++t) {
                       const std::size_t len = 3 + rng.index(4);
                       for (std::size_t j = 0; j < len; ++j) ids[t * row + j] = 1 + rng.index(5);
                     }
                     std::vector<Tensor> in = {random_tensor({6, dim}, rng),
                                               random_tensor({width * dim, k}, rng),
                                               random_tensor({1, k}, rng)};
                     auto loss = [&] {
                       return weighted_sum(
                           ops::char_conv_maxpool(in[0], ids, row, in[1], in[2], width), inst);
                     };
                     return check_gradients(loss, in, rng);
                   }});
  return cases;
}

inline std::vector<GradCase> composed_cases() {
  std::vector<GradCase> cases;
  cases.push_back({"char_cnn_front_end", [](std::uint64_t inst) {
                     Rng rng(7000 + inst);
                     const Vocab vocab = tiny_vocab();
                     Backbone b = Backbone::init(FrontEnd::kChar, tiny_encoder(vocab.size()), rng);
                     const std::vector<std::string> words = {"GaGaZui", "Hoodie", "2.5", "Oz"};
                     std::vector<CharRow> rows;
                     for (std::size_t i = 0; i < 3; ++i) {
                       rows.push_back(encode_chars(words[rng.index(words.size())]));
                     }
                     auto loss = [&] { return weighted_sum(b.embed_chars(rows), inst); };
                     return check_gradients(loss, b.parameters(), rng, 12);
                   }});
  cases.push_back({"attention_block", [](std::uint64_t inst) {
                     Rng rng(8000 + inst);
                     const Vocab vocab = tiny_vocab();
                     Backbone b =
                         Backbone::init(FrontEnd::kWordpiece, tiny_encoder(vocab.size()), rng);
                     Tensor x = random_tensor({5, b.config().d}, rng);
                     const std::vector<bool> mask = {true, true, true, true, false};
                     auto loss = [&] { return weighted_sum(b.encode(x, mask), inst); };
                     std::vector<Tensor> params = b.encoder_parameters();
                     params.push_back(x);
                     return check_gradients(loss, params, rng, 12);
                   }});
  cases.push_back({"fusion_mlp_alpha_prompt", [](std::uint64_t inst) {
                     Rng rng(9000 + inst);
                     const Vocab vocab = tiny_vocab();
                     const EncoderConfig cfg = tiny_encoder(vocab.size());
                     Backbone wp = Backbone::init(FrontEnd::kWordpiece, cfg, rng);
                     Backbone ch = Backbone::init(FrontEnd::kChar, cfg, rng);
                     std::vector<PromptMatrix> wp_prompts, ch_prompts;
                     for (EntityClass c : kAllClasses) {
                       wp_prompts.push_back(init_prompt(InitKind::kLabels, c, wp, vocab));
                       ch_prompts.push_back(init_prompt(InitKind::kLabels, c, ch, vocab));
                     }
                     const FusionMode mode = inst % 2 == 0 ? FusionMode::kAdd : FusionMode::kConcat;
                     EntailmentModel m = make_entailment_model(
                         mode, &wp, &ch, HypothesisSet::from_prompts(wp_prompts),
                         HypothesisSet::from_prompts(ch_prompts), 0.5 + rng.uniform(), cfg.max_seq,
                         rng);
                     const EntityClass cls = kAllClasses[rng.index(kNumClasses)];
                     const std::vector<std::size_t> target = {rng.index(2)};
                     auto loss = [&] {
                       return ops::cross_entropy_with_logits(
                           entailment_logits(m, vocab, "Nike Hoodie Black", "Hoodie", cls), target);
                     };
                     std::vector<Tensor> params = {m.alpha,
                                                   m.wordpiece_hypotheses.prompts[class_index(cls)]->h,
                                                   m.char_hypotheses.prompts[class_index(cls)]->h};
                     for (const Tensor& t : m.head.parameters()) params.push_back(t);
                     return check_gradients(loss, params, rng, 24);
                   }});
  return cases;
}

}  // namespace ctm::testing
