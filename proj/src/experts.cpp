#include "moepp/experts.hpp"

#include "moepp/ops.hpp"

namespace moepp {

namespace {
constexpr double kInitStd = 0.02;

void require_width(const Tensor& x, std::size_t hidden, const char* who) {
  if (x.dim() != 2 || x.cols() != hidden) {
    throw DimensionError(std::string(who) + ": input " + shape_str(x.shape()) + " does not have width " +
                         std::to_string(hidden));
  }
}
}  // namespace

std::string_view to_string(Activation act) { return act == Activation::Relu ? "relu" : "gelu"; }

Activation activation_from_string(std::string_view name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "relu") return Activation::Relu;
  throw ArgumentError("unknown FFN activation '" + std::string(name) + "' (expected gelu or relu)");
}

std::string_view to_string(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::FFN: return "ffn";
    case ExpertKind::Zero: return "zero";
    case ExpertKind::Copy: return "copy";
    case ExpertKind::Constant: return "constant";
  }
  return "?";
}

void ExpertSpec::validate() const {
  if (hidden < 1) throw ArgumentError("expert hidden size must be >= 1");
  if (kind == ExpertKind::FFN && intermediate < 1) throw ArgumentError("FFN intermediate size must be >= 1");
}

std::size_t parameter_count(const ExpertSpec& spec) {
  switch (spec.kind) {
    case ExpertKind::FFN: return 2 * spec.hidden * spec.intermediate + spec.intermediate + spec.hidden;
    case ExpertKind::Constant: return 3 * spec.hidden;
    case ExpertKind::Zero:
    case ExpertKind::Copy: return 0;
  }
  return 0;
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor ffn_forward(const Tensor& x, const FfnWeights& w, Activation act) {
  require_width(x, w.w1.cols(), "ffn_forward");
  Tensor pre = add(matmul(x, transpose(w.w1)), w.b1);
  Tensor h = act == Activation::Relu ? relu(pre) : gelu(pre);
  return add(matmul(h, transpose(w.w2)), w.b2);
}

Tensor zero_forward(const Tensor& x) { return Tensor::zeros(x.shape()); }

Tensor copy_forward(const Tensor& x) { return x; }

Tensor constant_forward(const Tensor& x, const Tensor& v, const Tensor& w_c) {
  std::size_t d = v.numel();
  require_width(x, d, "constant_forward");
  if (w_c.dim() != 2 || w_c.shape()[0] != 2 || w_c.shape()[1] != d) {
    throw DimensionError("constant_forward: W_c must be 2x" + std::to_string(d) + ", got " + shape_str(w_c.shape()));
  }
  Tensor alpha = softmax(matmul(x, transpose(w_c)), 1);  // T x 2
  Tensor keep = slice_cols(alpha, 0, 1);
  Tensor replace = slice_cols(alpha, 1, 2);
  return add(mul(x, keep), matmul(replace, reshape(v, {1, d})));
}

Expert::Expert(ExpertSpec spec, std::mt19937_64& rng) : spec_(spec) {
  spec_.validate();
  const std::size_t d = spec_.hidden;
  if (spec_.kind == ExpertKind::FFN) {
    const std::size_t h = spec_.intermediate;
    ffn_.w1 = normal_tensor({h, d}, kInitStd, rng);
    ffn_.b1 = Tensor::zeros({h}, true);
    ffn_.w2 = normal_tensor({d, h}, kInitStd, rng);
    ffn_.b2 = Tensor::zeros({d}, true);
  } else if (spec_.kind == ExpertKind::Constant) {
    // v starts at zero so the expert initially behaves like a damped copy.
    constant_.v = Tensor::zeros({d}, true);
    constant_.w_c = normal_tensor({2, d}, kInitStd, rng);
  }
}

Expert::Expert(ExpertSpec spec, FfnWeights weights) : spec_(spec), ffn_(std::move(weights)) {
  spec_.validate();
  if (spec_.kind != ExpertKind::FFN) throw ArgumentError("FFN weights given for a non-FFN expert");
  const std::size_t d = spec_.hidden, h = spec_.intermediate;
  if (ffn_.w1.shape() != Shape{h, d} || ffn_.b1.numel() != h || ffn_.w2.shape() != Shape{d, h} ||
      ffn_.b2.numel() != d) {
    throw DimensionError("FFN weight shapes do not match expert spec");
  }
}

Expert::Expert(ExpertSpec spec, ConstantWeights weights) : spec_(spec), constant_(std::move(weights)) {
  spec_.validate();
  if (spec_.kind != ExpertKind::Constant) throw ArgumentError("constant weights given for a non-constant expert");
  if (constant_.v.numel() != spec_.hidden || constant_.w_c.shape() != Shape{2, spec_.hidden}) {
    throw DimensionError("constant expert weight shapes do not match expert spec");
  }
}

Tensor Expert::forward(const Tensor& x) const {
  require_width(x, spec_.hidden, "Expert::forward");
  switch (spec_.kind) {
    case ExpertKind::FFN: return ffn_forward(x, ffn_, spec_.activation);
    case ExpertKind::Zero: return zero_forward(x);
    case ExpertKind::Copy: return copy_forward(x);
    case ExpertKind::Constant: return constant_forward(x, constant_.v, constant_.w_c);
  }
  return x;
}

std::vector<std::pair<std::string, Tensor>> Expert::named_parameters() const {
  switch (spec_.kind) {
    case ExpertKind::FFN: return {{"w1", ffn_.w1}, {"b1", ffn_.b1}, {"w2", ffn_.w2}, {"b2", ffn_.b2}};
    case ExpertKind::Constant: return {{"v", constant_.v}, {"w_c", constant_.w_c}};
    default: return {};
  }
}

}  // namespace moepp
