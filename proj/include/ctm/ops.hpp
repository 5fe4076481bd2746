#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctm/tensor.hpp"

// Differentiable primitives. Every function checks its input shapes and
// throws DimensionError (or IndexError for bad indices) naming the operation.
// Matrix-shaped operations treat a 1-D tensor of length n as a 1 x n row.
namespace ctm::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Elementwise sum. `b` may also be a 1 x cols row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// s * x for a learnable one-element tensor s.
Tensor scale_by(const Tensor& x, const Tensor& s);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor row_select(const Tensor& x, std::span<const std::size_t> rows);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

Tensor softmax_lastdim(const Tensor& x);
// Row softmax restricted to columns with col_valid[c]; rows with
// !row_valid[r] come out all zero. Masked entries carry no gradient.
Tensor masked_softmax(const Tensor& x, const std::vector<bool>& col_valid,
                      const std::vector<bool>& row_valid);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-12);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean over rows of -log softmax(logits[r])[targets[r]].
Tensor cross_entropy_with_logits(const Tensor& logits,
                                 std::span<const std::size_t> targets);

// One convolution width of a character CNN, fused with max-over-time pooling.
// `char_ids` holds tokens as consecutive rows of `row_length` ids into
// `char_table`; id 0 is padding and a row's padding is a suffix. For each
// token t and filter k the output is
//   max_p  bias[k] + sum_{j<width} char_table[ids[t][p+j]] . filters[j][k]
// over p in [0, row_length - width]. `filters` is (width * char_dim) x k.
Tensor char_conv_maxpool(const Tensor& char_table,
                         std::span<const int> char_ids,
                         std::size_t row_length, const Tensor& filters,
                         const Tensor& bias, std::size_t width);

}  // namespace ctm::ops
