#include "ctm/tensor.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <numeric>
#include <sstream>

#include "ctm/errors.hpp"

namespace ctm {

namespace {
thread_local Tape* g_active_tape = nullptr;

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must not be empty");
  for (std::size_t d : shape) {
    if (d == 0) {
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_string(shape));
    }
  }
}
}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->values.assign(product(shape), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  check_shape(shape);
  if (product(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  return s.size() == 1 ? 1 : product(s) / s.back();
}

std::size_t Tensor::cols() const { return shape().back(); }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return impl().values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  if (!on) impl().grad.clear();
  return *this;
}

std::span<double> Tensor::mutable_grad() const {
  auto& t = impl();
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
  return t.grad;
}

Tensor Tensor::clone() const {
  Tensor copy = from(shape(), impl().values);
  copy.impl().requires_grad = impl().requires_grad;
  return copy;
}

void Tape::record(std::string op, std::span<const Tensor> inputs,
                  Tensor& output, BackwardFn backward) {
  Entry entry;
  entry.op = std::move(op);
  for (const Tensor& in : inputs) {
    const auto& impl = in.impl();
    entry.inputs.push_back(impl.tape == this ? impl.node_id : -1);
  }
  auto& out = output.impl();
  out.requires_grad = true;
  out.node_id = static_cast<std::int64_t>(entries_.size());
  out.tape = this;
  entry.output = output;
  entry.backward = std::move(backward);
  entries_.push_back(std::move(entry));
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  const auto& impl = loss.impl();
  if (impl.tape != this || impl.node_id < 0) {
    throw ContractError("loss was not produced through this tape");
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (std::int64_t i = impl.node_id; i >= 0; --i) {
    Entry& e = entries_[static_cast<std::size_t>(i)];
    if (!e.output.has_grad()) continue;
    e.backward(e.output);
  }
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (!tape) throw ContractError("backward called without an active tape");
  tape->backward(loss);
}

std::string checksum(std::span<const Tensor> tensors) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const Tensor& t : tensors) {
    auto v = t.values();
    EVP_DigestUpdate(ctx, v.data(), v.size_bytes());
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    char buf[3];
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace ctm
