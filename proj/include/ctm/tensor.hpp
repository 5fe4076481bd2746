#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ctm {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty when no gradient has been accumulated
  bool requires_grad = false;
  std::int64_t node_id = -1;
  const void* tape = nullptr;
};
}  // namespace detail

// Dense row-major array of doubles. Copies share storage (handle semantics),
// so a tensor stored in two places is one parameter; use clone() for a deep
// copy. Most operations view a tensor as a matrix: a 1-D tensor of length n
// is a 1 x n row.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t numel() const { return impl().values.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return impl().values; }
  std::span<double> mutable_values() { return impl().values; }
  double at(std::size_t r, std::size_t c) const {
    return impl().values[r * cols() + c];
  }
  double item() const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const double> grad() const { return impl().grad; }
  // Gradient buffer, allocated as zeros on first use.
  std::span<double> mutable_grad() const;
  void clear_grad() { impl().grad.clear(); }

  std::int64_t node_id() const { return impl().node_id; }

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& handle() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
};

// Define-by-run record of differentiable operations. Operations record
// themselves on the thread's active tape (see TapeScope) whenever at least
// one input requires a gradient; with no active tape nothing is recorded.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& output)>;

  struct Entry {
    std::string op;
    std::vector<std::int64_t> inputs;  // node ids, -1 for leaves
    Tensor output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string op, std::span<const Tensor> inputs, Tensor& output,
              BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and replays backward rules in reverse order.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }

 private:
  std::vector<Entry> entries_;
};

Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Backpropagates through the thread's active tape.
void backward(const Tensor& loss);

// SHA-256 over the raw bytes of the given tensors' values, hex encoded.
std::string checksum(std::span<const Tensor> tensors);

}  // namespace ctm
