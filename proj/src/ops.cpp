#include "ctm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "ctm/errors.hpp"

namespace ctm::ops {

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

bool should_record(std::span<const Tensor> inputs) {
  if (active_tape() == nullptr) return false;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

void record(const char* op, std::vector<Tensor> inputs, Tensor& out,
            Tape::BackwardFn fn) {
  active_tape()->record(op, inputs, out, std::move(fn));
}

[[noreturn]] void dim_error(const char* op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

std::string shapes(const Tensor& a, const Tensor& b) {
  return shape_string(a.shape()) + " and " + shape_string(b.shape());
}

bool same_matrix(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  if (b.rows() != k) dim_error("matmul", "cannot multiply " + shapes(a, b));
  Tensor out = Tensor::zeros({r, c});
  auto A = a.values();
  auto B = b.values();
  auto C = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i) {
    double* crow = C.data() + i * c;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B.data() + p * c;
      for (std::size_t j = 0; j < c; ++j) crow[j] += aip * brow[j];
    }
  }
  if (should_record({&a, &b})) {
    record("matmul", {a, b}, out, [a, b, r, k, c](const Tensor& o) mutable {
      auto G = o.grad();
      if (a.requires_grad()) {
        auto dA = a.mutable_grad();
        auto B = b.values();
        for (std::size_t i = 0; i < r; ++i) {
          const double* grow = G.data() + i * c;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = B.data() + p * c;
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
            dA[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        auto dB = b.mutable_grad();
        auto A = a.values();
        for (std::size_t i = 0; i < r; ++i) {
          const double* grow = G.data() + i * c;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            double* dbrow = dB.data() + p * c;
            for (std::size_t j = 0; j < c; ++j) dbrow[j] += aip * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t r = a.rows(), k = a.cols(), c = b.rows();
  if (b.cols() != k) {
    dim_error("matmul_nt", "cannot multiply by transpose: " + shapes(a, b));
  }
  Tensor out = Tensor::zeros({r, c});
  auto A = a.values();
  auto B = b.values();
  auto C = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* arow = A.data() + i * k;
    for (std::size_t j = 0; j < c; ++j) {
      const double* brow = B.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      C[i * c + j] = acc;
    }
  }
  if (should_record({&a, &b})) {
    record("matmul_nt", {a, b}, out, [a, b, r, k, c](const Tensor& o) mutable {
      auto G = o.grad();
      if (a.requires_grad()) {
        auto dA = a.mutable_grad();
        auto B = b.values();
        for (std::size_t i = 0; i < r; ++i) {
          double* darow = dA.data() + i * k;
          for (std::size_t j = 0; j < c; ++j) {
            const double g = G[i * c + j];
            const double* brow = B.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) darow[p] += g * brow[p];
          }
        }
      }
      if (b.requires_grad()) {
        auto dB = b.mutable_grad();
        auto A = a.values();
        for (std::size_t i = 0; i < r; ++i) {
          const double* arow = A.data() + i * k;
          for (std::size_t j = 0; j < c; ++j) {
            const double g = G[i * c + j];
            double* dbrow = dB.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) dbrow[p] += g * arow[p];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros({c, r});
  auto X = x.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) Y[j * r + i] = X[i * c + j];
  if (should_record({&x})) {
    record("transpose", {x}, out, [x, r, c](const Tensor& o) mutable {
      auto G = o.grad();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dX[i * c + j] += G[j * r + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast = !same_matrix(a, b);
  if (broadcast && !(b.rows() == 1 && b.cols() == a.cols())) {
    dim_error("add", "shapes do not conform: " + shapes(a, b));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto A = a.values();
  auto B = b.values();
  auto Y = out.mutable_values();
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < Y.size(); ++i) {
    Y[i] = A[i] + B[broadcast ? i % c : i];
  }
  if (should_record({&a, &b})) {
    record("add", {a, b}, out, [a, b, broadcast, c](const Tensor& o) mutable {
      auto G = o.grad();
      if (a.requires_grad()) {
        auto dA = a.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) dA[i] += G[i];
      }
      if (b.requires_grad()) {
        auto dB = b.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) {
          dB[broadcast ? i % c : i] += G[i];
        }
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!same_matrix(a, b)) dim_error("sub", "shapes differ: " + shapes(a, b));
  Tensor out = Tensor::zeros(a.shape());
  auto A = a.values();
  auto B = b.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] - B[i];
  if (should_record({&a, &b})) {
    record("sub", {a, b}, out, [a, b](const Tensor& o) mutable {
      auto G = o.grad();
      if (a.requires_grad()) {
        auto dA = a.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) dA[i] += G[i];
      }
      if (b.requires_grad()) {
        auto dB = b.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i) dB[i] -= G[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (!same_matrix(a, b)) dim_error("mul", "shapes differ: " + shapes(a, b));
  Tensor out = Tensor::zeros(a.shape());
  auto A = a.values();
  auto B = b.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = A[i] * B[i];
  if (should_record({&a, &b})) {
    record("mul", {a, b}, out, [a, b](const Tensor& o) mutable {
      auto G = o.grad();
      if (a.requires_grad()) {
        auto dA = a.mutable_grad();
        auto B = b.values();
        for (std::size_t i = 0; i < G.size(); ++i) dA[i] += G[i] * B[i];
      }
      if (b.requires_grad()) {
        auto dB = b.mutable_grad();
        auto A = a.values();
        for (std::size_t i = 0; i < G.size(); ++i) dB[i] += G[i] * A[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = Tensor::zeros(x.shape());
  auto X = x.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = factor * X[i];
  if (should_record({&x})) {
    record("scale", {x}, out, [x, factor](const Tensor& o) mutable {
      auto G = o.grad();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i) dX[i] += factor * G[i];
    });
  }
  return out;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    dim_error("scale_by", "scale must hold one value, got " +
                              shape_string(s.shape()));
  }
  const double factor = s.item();
  Tensor out = Tensor::zeros(x.shape());
  auto X = x.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = factor * X[i];
  if (should_record({&x, &s})) {
    record("scale_by", {x, s}, out, [x, s](const Tensor& o) mutable {
      auto G = o.grad();
      if (x.requires_grad()) {
        auto dX = x.mutable_grad();
        const double f = s.item();
        for (std::size_t i = 0; i < G.size(); ++i) dX[i] += f * G[i];
      }
      if (s.requires_grad()) {
        auto X = x.values();
        double acc = 0.0;
        for (std::size_t i = 0; i < G.size(); ++i) acc += G[i] * X[i];
        s.mutable_grad()[0] += acc;
      }
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) dim_error("concat_rows", "no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != c) {
      dim_error("concat_rows", "column mismatch " + shapes(parts[0], p));
    }
    total += p.rows();
  }
  Tensor out = Tensor::zeros({total, c});
  auto Y = out.mutable_values();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    auto v = p.values();
    std::copy(v.begin(), v.end(), Y.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.size();
  }
  if (should_record(parts)) {
    std::vector<Tensor> ins(parts.begin(), parts.end());
    record("concat_rows", ins, out, [ins](const Tensor& o) mutable {
      auto G = o.grad();
      std::size_t offset = 0;
      for (Tensor& p : ins) {
        const std::size_t n = p.numel();
        if (p.requires_grad()) {
          auto dP = p.mutable_grad();
          for (std::size_t i = 0; i < n; ++i) dP[i] += G[offset + i];
        }
        offset += n;
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) dim_error("concat_cols", "no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != r) {
      dim_error("concat_cols", "row mismatch " + shapes(parts[0], p));
    }
    total += p.cols();
  }
  Tensor out = Tensor::zeros({r, total});
  auto Y = out.mutable_values();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    auto v = p.values();
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) Y[i * total + offset + j] = v[i * c + j];
    offset += c;
  }
  if (should_record(parts)) {
    std::vector<Tensor> ins(parts.begin(), parts.end());
    record("concat_cols", ins, out, [ins, r, total](const Tensor& o) mutable {
      auto G = o.grad();
      std::size_t offset = 0;
      for (Tensor& p : ins) {
        const std::size_t c = p.cols();
        if (p.requires_grad()) {
          auto dP = p.mutable_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              dP[i * c + j] += G[i * total + offset + j];
        }
        offset += c;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t r = x.rows(), c = x.cols();
  if (count == 0 || begin + count > c) {
    dim_error("slice_cols", "columns [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) +
                                ") out of " + shape_string(x.shape()));
  }
  Tensor out = Tensor::zeros({r, count});
  auto X = x.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) Y[i * count + j] = X[i * c + begin + j];
  if (should_record({&x})) {
    record("slice_cols", {x}, out, [x, r, c, begin, count](const Tensor& o) mutable {
      auto G = o.grad();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j)
          dX[i * c + begin + j] += G[i * count + j];
    });
  }
  return out;
}

namespace {

Tensor gather_rows(const char* op, const Tensor& x,
                   std::vector<std::size_t> rows) {
  if (rows.empty()) dim_error(op, "empty index list");
  const std::size_t n = x.rows(), c = x.cols();
  for (std::size_t r : rows) {
    if (r >= n) {
      throw IndexError(std::string(op) + ": index " + std::to_string(r) +
                       " out of range for " + std::to_string(n) + " rows");
    }
  }
  Tensor out = Tensor::zeros({rows.size(), c});
  auto X = x.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(X.begin() + static_cast<std::ptrdiff_t>(rows[i] * c), c,
                Y.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  if (should_record({&x})) {
    record(op, {x}, out, [x, rows = std::move(rows), c](const Tensor& o) mutable {
      auto G = o.grad();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double* drow = dX.data() + rows[i] * c;
        const double* grow = G.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) drow[j] += grow[j];
      }
    });
  }
  return out;
}

}  // namespace

Tensor row_select(const Tensor& x, std::span<const std::size_t> rows) {
  return gather_rows("row_select", x, {rows.begin(), rows.end()});
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) +
                       " out of range [0, " + std::to_string(table.rows()) +
                       ")");
    }
    rows.push_back(static_cast<std::size_t>(id));
  }
  return gather_rows("embedding_lookup", table, std::move(rows));
}

namespace {

void softmax_backward(std::span<const double> Y, std::span<const double> G,
                      std::span<double> dX, std::size_t r, std::size_t c) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* y = Y.data() + i * c;
    const double* g = G.data() + i * c;
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
    for (std::size_t j = 0; j < c; ++j) dX[i * c + j] += y[j] * (g[j] - dot);
  }
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  auto X = x.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = X.data() + i * c;
    double* yr = Y.data() + i * c;
    const double mx = *std::max_element(xr, xr + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += yr[j] = std::exp(xr[j] - mx);
    for (std::size_t j = 0; j < c; ++j) yr[j] /= total;
  }
  if (should_record({&x})) {
    record("softmax_lastdim", {x}, out, [x, r, c](const Tensor& o) mutable {
      softmax_backward(o.values(), o.grad(), x.mutable_grad(), r, c);
    });
  }
  return out;
}

Tensor masked_softmax(const Tensor& x, const std::vector<bool>& col_valid,
                      const std::vector<bool>& row_valid) {
  const std::size_t r = x.rows(), c = x.cols();
  if (col_valid.size() != c || row_valid.size() != r) {
    dim_error("masked_softmax", "mask sizes " + std::to_string(row_valid.size()) +
                                    "x" + std::to_string(col_valid.size()) +
                                    " do not match " + shape_string(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  auto X = x.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i) {
    if (!row_valid[i]) continue;
    const double* xr = X.data() + i * c;
    double* yr = Y.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (col_valid[j]) mx = std::max(mx, xr[j]);
    if (!std::isfinite(mx)) continue;  // no valid columns
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (col_valid[j]) total += yr[j] = std::exp(xr[j] - mx);
    }
    for (std::size_t j = 0; j < c; ++j) yr[j] /= total;
  }
  if (should_record({&x})) {
    // Masked outputs are exactly zero, so the unmasked rule yields zero
    // gradient for them as well.
    record("masked_softmax", {x}, out, [x, r, c](const Tensor& o) mutable {
      softmax_backward(o.values(), o.grad(), x.mutable_grad(), r, c);
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.numel() != c || beta.numel() != c) {
    dim_error("layer_norm", "affine parameters " + shapes(gamma, beta) +
                                " do not match width " + std::to_string(c));
  }
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(r * c);
  std::vector<double> inv_std(r);
  auto X = x.values();
  auto Gm = gamma.values();
  auto Bt = beta.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = X.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * inv;
      xhat[i * c + j] = h;
      Y[i * c + j] = h * Gm[j] + Bt[j];
    }
  }
  if (should_record({&x, &gamma, &beta})) {
    record("layer_norm", {x, gamma, beta}, out,
           [x, gamma, beta, r, c, xhat = std::move(xhat),
            inv_std = std::move(inv_std)](const Tensor& o) mutable {
             auto G = o.grad();
             if (gamma.requires_grad()) {
               auto dG = gamma.mutable_grad();
               for (std::size_t i = 0; i < r * c; ++i) dG[i % c] += G[i] * xhat[i];
             }
             if (beta.requires_grad()) {
               auto dB = beta.mutable_grad();
               for (std::size_t i = 0; i < r * c; ++i) dB[i % c] += G[i];
             }
             if (x.requires_grad()) {
               auto dX = x.mutable_grad();
               auto Gm = gamma.values();
               std::vector<double> g(c);
               for (std::size_t i = 0; i < r; ++i) {
                 double mean_g = 0.0, mean_gx = 0.0;
                 for (std::size_t j = 0; j < c; ++j) {
                   g[j] = G[i * c + j] * Gm[j];
                   mean_g += g[j];
                   mean_gx += g[j] * xhat[i * c + j];
                 }
                 mean_g /= static_cast<double>(c);
                 mean_gx /= static_cast<double>(c);
                 for (std::size_t j = 0; j < c; ++j) {
                   dX[i * c + j] +=
                       inv_std[i] * (g[j] - mean_g - xhat[i * c + j] * mean_gx);
                 }
               }
             }
           });
  }
  return out;
}

namespace {

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& x, F f, D df) {
  Tensor out = Tensor::zeros(x.shape());
  auto X = x.values();
  auto Y = out.mutable_values();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = f(X[i]);
  if (should_record({&x})) {
    record(op, {x}, out, [x, df](const Tensor& o) mutable {
      auto G = o.grad();
      auto X = x.values();
      auto Y = o.values();
      auto dX = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i) dX[i] += G[i] * df(X[i], Y[i]);
    });
  }
  return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (should_record({&x})) {
    record("sum", {x}, out, [x](const Tensor& o) mutable {
      const double g = o.grad()[0];
      for (double& d : x.mutable_grad()) d += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc / n);
  if (should_record({&x})) {
    record("mean", {x}, out, [x, n](const Tensor& o) mutable {
      const double g = o.grad()[0] / n;
      for (double& d : x.mutable_grad()) d += g;
    });
  }
  return out;
}

Tensor cross_entropy_with_logits(const Tensor& logits,
                                 std::span<const std::size_t> targets) {
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) {
    dim_error("cross_entropy_with_logits",
              std::to_string(targets.size()) + " targets for logits " +
                  shape_string(logits.shape()));
  }
  for (std::size_t t : targets) {
    if (t >= c) {
      throw IndexError("cross_entropy_with_logits: target " +
                       std::to_string(t) + " out of range for " +
                       std::to_string(c) + " classes");
    }
  }
  auto L = logits.values();
  std::vector<double> probs(r * c);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const double* lr = L.data() + i * c;
    const double mx = *std::max_element(lr, lr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += probs[i * c + j] = std::exp(lr[j] - mx);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += (std::log(z) + mx) - lr[targets[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(r));
  if (should_record({&logits})) {
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    record("cross_entropy_with_logits", {logits}, out,
           [logits, probs = std::move(probs), tgt = std::move(tgt), r,
            c](const Tensor& o) mutable {
             const double g = o.grad()[0] / static_cast<double>(r);
             auto dL = logits.mutable_grad();
             for (std::size_t i = 0; i < r; ++i) {
               for (std::size_t j = 0; j < c; ++j) {
                 const double onehot = (j == tgt[i]) ? 1.0 : 0.0;
                 dL[i * c + j] += g * (probs[i * c + j] - onehot);
               }
             }
           });
  }
  return out;
}

Tensor char_conv_maxpool(const Tensor& char_table,
                         std::span<const int> char_ids, std::size_t row_length,
                         const Tensor& filters, const Tensor& bias,
                         std::size_t width) {
  const char* op = "char_conv_maxpool";
  const std::size_t cd = char_table.cols();
  const std::size_t alphabet = char_table.rows();
  const std::size_t k = filters.cols();
  if (row_length == 0 || char_ids.empty() || char_ids.size() % row_length != 0) {
    dim_error(op, std::to_string(char_ids.size()) +
                      " ids do not form rows of length " +
                      std::to_string(row_length));
  }
  if (width == 0 || width > row_length) {
    dim_error(op, "filter width " + std::to_string(width) +
                      " does not fit rows of length " + std::to_string(row_length));
  }
  if (filters.rows() != width * cd) {
    dim_error(op, "filters " + shape_string(filters.shape()) +
                      " expected " + std::to_string(width * cd) + " rows");
  }
  if (bias.numel() != k) {
    dim_error(op, "bias " + shape_string(bias.shape()) + " for " +
                      std::to_string(k) + " filters");
  }
  for (int id : char_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= alphabet) {
      throw IndexError(std::string(op) + ": char id " + std::to_string(id) +
                       " out of range [0, " + std::to_string(alphabet) + ")");
    }
  }
  const std::size_t tokens = char_ids.size() / row_length;
  const std::size_t positions = row_length - width + 1;
  Tensor out = Tensor::zeros({tokens, k});
  std::vector<std::size_t> argmax(tokens * k, 0);
  auto E = char_table.values();
  auto W = filters.values();
  auto B = bias.values();
  auto Y = out.mutable_values();
  std::vector<double> acc(k);
  for (std::size_t t = 0; t < tokens; ++t) {
    const int* ids = char_ids.data() + t * row_length;
    std::size_t content = row_length;
    while (content > 0 && ids[content - 1] == 0) --content;
    // Windows that start inside the padding suffix all see the same ids, so
    // only the first of them is evaluated.
    const std::size_t last = std::min(positions, content + 1);
    double* yt = Y.data() + t * k;
    for (std::size_t p = 0; p < last; ++p) {
      std::copy(B.begin(), B.end(), acc.begin());
      for (std::size_t j = 0; j < width; ++j) {
        const double* e = E.data() + static_cast<std::size_t>(ids[p + j]) * cd;
        for (std::size_t i = 0; i < cd; ++i) {
          const double ei = e[i];
          const double* w = W.data() + (j * cd + i) * k;
          for (std::size_t f = 0; f < k; ++f) acc[f] += ei * w[f];
        }
      }
      for (std::size_t f = 0; f < k; ++f) {
        if (p == 0 || acc[f] > yt[f]) {
          yt[f] = acc[f];
          argmax[t * k + f] = p;
        }
      }
    }
  }
  if (should_record({&char_table, &filters, &bias})) {
    std::vector<int> ids(char_ids.begin(), char_ids.end());
    record(op, {char_table, filters, bias}, out,
           [char_table, filters, bias, ids = std::move(ids),
            argmax = std::move(argmax), row_length, tokens, k, cd,
            width](const Tensor& o) mutable {
             auto G = o.grad();
             auto E = char_table.values();
             auto W = filters.values();
             std::span<double> dE, dW, dB;
             if (char_table.requires_grad()) dE = char_table.mutable_grad();
             if (filters.requires_grad()) dW = filters.mutable_grad();
             if (bias.requires_grad()) dB = bias.mutable_grad();
             for (std::size_t t = 0; t < tokens; ++t) {
               for (std::size_t f = 0; f < k; ++f) {
                 const double g = G[t * k + f];
                 if (g == 0.0) continue;
                 if (!dB.empty()) dB[f] += g;
                 const std::size_t p = argmax[t * k + f];
                 for (std::size_t j = 0; j < width; ++j) {
                   const std::size_t id =
                       static_cast<std::size_t>(ids[t * row_length + p + j]);
                   for (std::size_t i = 0; i < cd; ++i) {
                     const std::size_t w_at = (j * cd + i) * k + f;
                     if (!dW.empty()) dW[w_at] += g * E[id * cd + i];
                     if (!dE.empty()) dE[id * cd + i] += g * W[w_at];
                   }
                 }
               }
             }
           });
  }
  return out;
}

}  // namespace ctm::ops
