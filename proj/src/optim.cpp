#include "ctm/optim.hpp"

#include <cmath>

#include "ctm/errors.hpp"

namespace ctm {

Adam::Adam(std::vector<Tensor> params, AdamOptions options,
           std::vector<bool> frozen)
    : params_(std::move(params)), options_(options), frozen_(std::move(frozen)) {
  if (frozen_.empty()) frozen_.assign(params_.size(), false);
  if (frozen_.size() != params_.size()) {
    throw ContractError("Adam: frozen flags do not match parameter count");
  }
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!frozen_[i] && !params_[i].has_grad()) {
      throw ContractError("Adam: trainable parameter " + std::to_string(i) +
                          " " + shape_string(params_[i].shape()) +
                          " has no gradient");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (frozen_[i]) continue;
    auto w = params_[i].mutable_values();
    auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.clear_grad();
}

}  // namespace ctm
