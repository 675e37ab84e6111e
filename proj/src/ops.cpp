#include "moepp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "moepp/autograd.hpp"

namespace moepp {

namespace {

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite value in output");
  }
}

// Records `backward` on the active tape if any input needs a gradient.
template <class F>
void record(const char* op, std::vector<Tensor> inputs, Tensor& out, F&& backward) {
  Tape* tape = active_tape();
  if (!tape) return;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return;
  out.set_requires_grad(true);
  tape->record(op, std::move(inputs), out, std::forward<F>(backward));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

struct Broadcast {
  std::size_t rows, cols, b_rows, b_cols;
  std::size_t b_index(std::size_t r, std::size_t c) const {
    return (b_rows == 1 ? 0 : r) * b_cols + (b_cols == 1 ? 0 : c);
  }
};

Broadcast broadcast_dims(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast bc{a.rows(), a.cols(), b.rows(), b.cols()};
  bool ok = (bc.b_rows == bc.rows || bc.b_rows == 1) && (bc.b_cols == bc.cols || bc.b_cols == 1);
  if (!ok) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(a.shape()));
  }
  return bc;
}

template <class Fwd, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  auto bc = broadcast_dims(a, b, op);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t r = 0; r < bc.rows; ++r) {
    for (std::size_t c = 0; c < bc.cols; ++c) {
      std::size_t i = r * bc.cols + c;
      o[i] = fwd(ad[i], bd[bc.b_index(r, c)]);
    }
  }
  check_finite(out, op);
  record(op, {a, b}, out, [a, b, out, bc, da, db]() mutable {
    auto g = out.grad();
    auto ad = a.data();
    auto bd = b.data();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += g[i] * da(ad[i], bd[bc.b_index(i / bc.cols, i % bc.cols)]);
      }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::size_t j = bc.b_index(i / bc.cols, i % bc.cols);
        gb[j] += g[i] * db(ad[i], bd[j]);
      }
    }
  });
  return out;
}

// out[m x n] += a[m x k] * b[k x n], row-major, i-k-j order.
void gemm_acc(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x n] += a[m x k] * b[n x k]^T.
void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      out[i * n + j] += s;
    }
  }
}

// out[k x n] += a[m x k]^T * b[m x n].
void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      double* orow = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

int normalize_axis(const Tensor& a, int axis, const char* op) {
  if (a.dim() == 1) {
    if (axis != 0 && axis != -1) throw ArgumentError(std::string(op) + ": axis out of range for 1-D tensor");
    return 1;  // a 1-D tensor is a single row
  }
  if (axis == -1) axis = 1;
  if (axis != 0 && axis != 1) throw ArgumentError(std::string(op) + ": axis must be 0, 1 or -1");
  return axis;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  gemm_acc(a.data(), b.data(), out.mutable_data(), m, k, n);
  check_finite(out, "matmul");
  record("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) gemm_nt_acc(g, b.data(), a.mutable_grad(), m, n, k);
    if (b.requires_grad()) gemm_tn_acc(a.data(), g, b.mutable_grad(), m, k, n);
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out = Tensor::zeros({c, r});
  auto o = out.mutable_data();
  auto d = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[j * r + i] = d[i * c + j];
  record("transpose", {a}, out, [a, out, r, c]() mutable {
    auto g = out.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  Tensor out = a.reshape(std::move(shape));
  record("reshape", {a}, out, [a, out]() mutable {
    auto g = out.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto d = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = d[i] * factor;
  check_finite(out, "scale");
  record("scale", {a}, out, [a, out, factor]() mutable {
    auto g = out.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
  });
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto d = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = 0.5 * d[i] * (1.0 + std::erf(d[i] / std::numbers::sqrt2));
  }
  check_finite(out, "gelu");
  record("gelu", {a}, out, [a, out]() mutable {
    auto g = out.grad();
    auto d = a.data();
    auto ga = a.mutable_grad();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double cdf = 0.5 * (1.0 + std::erf(d[i] / std::numbers::sqrt2));
      double pdf = inv_sqrt_2pi * std::exp(-0.5 * d[i] * d[i]);
      ga[i] += g[i] * (cdf + d[i] * pdf);
    }
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto d = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = d[i] > 0.0 ? d[i] : 0.0;
  check_finite(out, "relu");
  record("relu", {a}, out, [a, out]() mutable {
    auto g = out.grad();
    auto d = a.data();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (d[i] > 0.0) ga[i] += g[i];
  });
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  int ax = normalize_axis(a, axis, "softmax");
  std::size_t rows = a.rows(), cols = a.cols();
  if (a.numel() == 0) throw DimensionError("softmax: empty input");
  // Lines run along `ax`: rows of length `cols` for ax=1, columns for ax=0.
  std::size_t lines = ax == 1 ? rows : cols;
  std::size_t len = ax == 1 ? cols : rows;
  std::size_t line_stride = ax == 1 ? cols : 1;
  std::size_t elem_stride = ax == 1 ? 1 : cols;

  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto d = a.data();
  for (std::size_t l = 0; l < lines; ++l) {
    std::size_t base = l * line_stride;
    double mx = d[base];
    for (std::size_t e = 1; e < len; ++e) mx = std::max(mx, d[base + e * elem_stride]);
    double z = 0.0;
    for (std::size_t e = 0; e < len; ++e) {
      double v = std::exp(d[base + e * elem_stride] - mx);
      o[base + e * elem_stride] = v;
      z += v;
    }
    for (std::size_t e = 0; e < len; ++e) o[base + e * elem_stride] /= z;
  }
  check_finite(out, "softmax");
  record("softmax", {a}, out, [a, out, lines, len, line_stride, elem_stride]() mutable {
    auto g = out.grad();
    auto y = out.data();
    auto ga = a.mutable_grad();
    for (std::size_t l = 0; l < lines; ++l) {
      std::size_t base = l * line_stride;
      double dot = 0.0;
      for (std::size_t e = 0; e < len; ++e) {
        std::size_t i = base + e * elem_stride;
        dot += g[i] * y[i];
      }
      for (std::size_t e = 0; e < len; ++e) {
        std::size_t i = base + e * elem_stride;
        ga[i] += y[i] * (g[i] - dot);
      }
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_matrix(logits, "cross_entropy");
  std::size_t t_count = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != t_count) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(t_count) + " rows");
  }
  if (t_count == 0) throw DimensionError("cross_entropy: no rows");
  for (auto t : targets) {
    if (t >= vocab) throw ArgumentError("cross_entropy: target " + std::to_string(t) + " out of range");
  }
  auto d = logits.data();
  std::vector<double> probs(d.size());
  double total = 0.0;
  for (std::size_t r = 0; r < t_count; ++r) {
    const double* row = d.data() + r * vocab;
    double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      probs[r * vocab + c] = std::exp(row[c] - mx);
      z += probs[r * vocab + c];
    }
    for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] /= z;
    total += -(row[targets[r]] - mx - std::log(z));
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(t_count));
  check_finite(out, "cross_entropy");
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  record("cross_entropy", {logits}, out, [logits, out, probs = std::move(probs), tgt, t_count, vocab]() mutable {
    double g = out.grad()[0] / static_cast<double>(t_count);
    auto gl = logits.mutable_grad();
    for (std::size_t r = 0; r < t_count; ++r) {
      for (std::size_t c = 0; c < vocab; ++c) {
        double p = probs[r * vocab + c] - (c == tgt[r] ? 1.0 : 0.0);
        gl[r * vocab + c] += g * p;
      }
    }
  });
  return out;
}

Tensor sum(const Tensor& a) {
  auto d = a.data();
  Tensor out = Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0));
  check_finite(out, "sum");
  record("sum", {a}, out, [a, out]() mutable {
    double g = out.grad()[0];
    for (auto& v : a.mutable_grad()) v += g;
  });
  return out;
}

Tensor sum(const Tensor& a, int axis) {
  int ax = normalize_axis(a, axis, "sum");
  std::size_t rows = a.rows(), cols = a.cols();
  Tensor out = ax == 0 ? Tensor::zeros({1, cols}) : Tensor::zeros({rows, 1});
  auto o = out.mutable_data();
  auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) o[ax == 0 ? c : r] += d[r * cols + c];
  check_finite(out, "sum");
  record("sum_axis", {a}, out, [a, out, ax, rows, cols]() mutable {
    auto g = out.grad();
    auto ga = a.mutable_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[ax == 0 ? c : r];
  });
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, int axis) {
  int ax = normalize_axis(a, axis, "mean");
  std::size_t n = ax == 0 ? a.rows() : a.cols();
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  std::size_t cols = a.shape()[1];
  if (begin > end || end > a.shape()[0]) throw ArgumentError("slice_rows: range out of bounds");
  auto d = a.data();
  Tensor out({end - begin, cols}, std::vector<double>(d.begin() + begin * cols, d.begin() + end * cols));
  record("slice_rows", {a}, out, [a, out, begin, cols]() mutable {
    auto g = out.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
  });
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (begin > end || end > cols) throw ArgumentError("slice_cols: range out of bounds");
  std::size_t w = end - begin;
  Tensor out = Tensor::zeros({rows, w});
  auto o = out.mutable_data();
  auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) o[r * w + c] = d[r * cols + begin + c];
  record("slice_cols", {a}, out, [a, out, rows, cols, begin, w]() mutable {
    auto g = out.grad();
    auto ga = a.mutable_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  std::size_t cols = parts[0].cols(), rows = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  Tensor out({rows, cols}, std::move(data));
  record("concat_rows", parts, out, [parts, out]() mutable {
    auto g = out.grad();
    std::size_t offset = 0;
    for (auto& p : parts) {
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      }
      offset += p.numel();
    }
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  std::size_t rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out = Tensor::zeros({rows, cols});
  auto o = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    auto d = p.data();
    std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) o[r * cols + offset + c] = d[r * w + c];
    offset += w;
  }
  record("concat_cols", parts, out, [parts, out, rows, cols]() mutable {
    auto g = out.grad();
    std::size_t offset = 0;
    for (auto& p : parts) {
      std::size_t w = p.cols();
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * cols + offset + c];
      }
      offset += w;
    }
  });
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  require_matrix(a, "gather_rows");
  std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out = Tensor::zeros({index.size(), cols});
  auto o = out.mutable_data();
  auto d = a.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) throw ArgumentError("gather_rows: index " + std::to_string(index[r]) + " out of range");
    std::copy_n(d.begin() + index[r] * cols, cols, o.begin() + r * cols);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  record("gather_rows", {a}, out, [a, out, idx, cols]() mutable {
    auto g = out.grad();
    auto ga = a.mutable_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) ga[idx[r] * cols + c] += g[r * cols + c];
  });
  return out;
}

Tensor index_add_rows(const Tensor& base, const Tensor& src, std::span<const std::size_t> index) {
  require_matrix(base, "index_add_rows");
  require_matrix(src, "index_add_rows");
  std::size_t rows = base.shape()[0], cols = base.shape()[1];
  if (src.shape()[1] != cols || src.shape()[0] != index.size()) {
    throw DimensionError("index_add_rows: source " + shape_str(src.shape()) + " incompatible with " +
                         std::to_string(index.size()) + " indices into " + shape_str(base.shape()));
  }
  Tensor out = base.detach();
  auto o = out.mutable_data();
  auto s = src.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) throw ArgumentError("index_add_rows: index out of range");
    for (std::size_t c = 0; c < cols; ++c) o[index[r] * cols + c] += s[r * cols + c];
  }
  check_finite(out, "index_add_rows");
  std::vector<std::size_t> idx(index.begin(), index.end());
  record("index_add_rows", {base, src}, out, [base, src, out, idx, cols]() mutable {
    auto g = out.grad();
    if (base.requires_grad()) {
      auto gb = base.mutable_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
    }
    if (src.requires_grad()) {
      auto gs = src.mutable_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) gs[r * cols + c] += g[idx[r] * cols + c];
    }
  });
  return out;
}

Tensor gather_elements(const Tensor& a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  require_matrix(a, "gather_elements");
  if (rows.size() != cols.size()) throw DimensionError("gather_elements: index lists differ in length");
  std::size_t width = a.shape()[1];
  Tensor out = Tensor::zeros({rows.size(), 1});
  auto o = out.mutable_data();
  std::vector<std::size_t> flat(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.shape()[0] || cols[i] >= width) throw ArgumentError("gather_elements: index out of range");
    flat[i] = rows[i] * width + cols[i];
    o[i] = a.data()[flat[i]];
  }
  record("gather_elements", {a}, out, [a, out, flat]() mutable {
    auto g = out.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < flat.size(); ++i) ga[flat[i]] += g[i];
  });
  return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
  require_matrix(x, "rms_norm");
  std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (weight.numel() != cols) throw DimensionError("rms_norm: weight size does not match width");
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto d = x.data();
  auto w = weight.data();
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += d[r * cols + c] * d[r * cols + c];
    inv[r] = 1.0 / std::sqrt(ss / static_cast<double>(cols) + eps);
    for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = d[r * cols + c] * inv[r] * w[c];
  }
  check_finite(out, "rms_norm");
  record("rms_norm", {x, weight}, out, [x, weight, out, inv, rows, cols]() mutable {
    auto g = out.grad();
    auto d = x.data();
    auto w = weight.data();
    if (weight.requires_grad()) {
      auto gw = weight.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gw[c] += g[r * cols + c] * d[r * cols + c] * inv[r];
    }
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * w[c] * d[r * cols + c];
        double k = inv[r] * inv[r] * inv[r] / static_cast<double>(cols);
        for (std::size_t c = 0; c < cols; ++c) {
          gx[r * cols + c] += inv[r] * w[c] * g[r * cols + c] - k * d[r * cols + c] * dot;
        }
      }
    }
  });
  return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
  if (k < 1 || k > values.size()) {
    throw ArgumentError("topk_indices: k=" + std::to_string(k) + " outside [1, " + std::to_string(values.size()) +
                        "]");
  }
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> topk_indices(const Tensor& values, std::size_t k) {
  if (values.dim() != 1 && values.rows() != 1) throw DimensionError("topk_indices: expected a vector");
  return topk_indices(values.data(), k);
}

}  // namespace moepp
