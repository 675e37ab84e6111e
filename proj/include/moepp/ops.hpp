#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "moepp/tensor.hpp"

// Differentiable operations on 1-D and 2-D tensors. Every op checks its
// output for NaN/Inf and throws NumericalError instead of propagating.
//
// Binary elementwise ops broadcast the second operand only: `b` may match
// `a` exactly, or have extent 1 along either axis (a 1-D `b` of length C is
// treated as a 1xC row). The result always has the shape of `a`.

namespace moepp {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// Exact GELU: x * Phi(x).
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);

/// Max-subtracted softmax. `axis` is 0 or 1 for 2-D input (-1 means last).
Tensor softmax(const Tensor& a, int axis = -1);

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

Tensor sum(const Tensor& a);
/// Sum along `axis`, keeping a 2-D result (1xC for axis 0, Rx1 for axis 1).
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// out[r] = a[index[r]].
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
/// out = base; out[index[r]] += src[r].
Tensor index_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> index);
/// out[r] = a[rows[r], cols[r]] as an nx1 column.
Tensor gather_elements(const Tensor& a, std::span<const std::size_t> rows,
                       std::span<const std::size_t> cols);

/// Row-wise x / rms(x) * weight.
Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps = 1e-6);

/// Indices of the k largest values, in descending value order; ties go to
/// the lower index. Not differentiable.
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k);
std::vector<std::size_t> topk_indices(const Tensor& values, std::size_t k);

}  // namespace moepp
