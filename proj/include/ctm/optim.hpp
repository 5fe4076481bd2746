#pragma once

#include <cstddef>
#include <vector>

#include "ctm/tensor.hpp"

namespace ctm {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction and a per-parameter freeze flag. Frozen
// parameters are never written; their gradients are ignored.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options,
       std::vector<bool> frozen = {});

  // Applies one update from the accumulated gradients. Throws ContractError
  // if a trainable parameter carries no gradient.
  void step();
  void zero_grad();

  void set_frozen(std::size_t i, bool frozen) { frozen_.at(i) = frozen; }
  bool frozen(std::size_t i) const { return frozen_.at(i); }
  std::size_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  std::span<const double> first_moment(std::size_t i) const { return m_.at(i); }
  std::span<const double> second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<bool> frozen_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

}  // namespace ctm
