#include "moepp/router.hpp"

#include "moepp/experts.hpp"
#include "moepp/ops.hpp"

namespace moepp {

RouterParams make_router_params(std::size_t n_experts, std::size_t hidden, bool with_residual,
                                std::mt19937_64& rng) {
  RouterParams p;
  p.w = normal_tensor({n_experts, hidden}, 0.02, rng);
  if (with_residual) {
    Tensor wg = Tensor::identity(n_experts, true);
    for (auto& v : wg.mutable_data()) v *= 0.1;
    p.w_g = wg;
  }
  return p;
}

RouterOutput route(const Tensor& x, const std::optional<Tensor>& prev_logits, const RouterParams& params,
                   const RouterOptions& options) {
  if (x.dim() != 2) throw DimensionError("route: x must be T x D, got " + shape_str(x.shape()));
  const std::size_t t_count = x.shape()[0];
  const std::size_t n = params.w.rows();
  if (params.w.dim() != 2 || params.w.cols() != x.cols()) {
    throw DimensionError("route: router weight " + shape_str(params.w.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  if (options.k < 1 || options.k > n) {
    throw ArgumentError("route: K=" + std::to_string(options.k) + " must lie in [1, " + std::to_string(n) + "]");
  }

  RouterOutput out;
  out.logits = matmul(x, transpose(params.w));
  if (prev_logits) {
    if (!params.w_g) throw ArgumentError("route: previous logits given but layer has no residual transform");
    if (prev_logits->shape() != Shape{t_count, n}) {
      throw DimensionError("route: previous logits " + shape_str(prev_logits->shape()) + " expected " +
                           shape_str({t_count, n}));
    }
    Tensor prev = options.detach_previous ? prev_logits->detach() : *prev_logits;
    out.logits = add(out.logits, matmul(prev, transpose(*params.w_g)));
  }
  out.probs = softmax(out.logits, 1);

  Tensor mask = Tensor::zeros({t_count, n});
  auto m = mask.mutable_data();
  auto scores = out.logits.data();
  out.selected.reserve(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    auto top = topk_indices(scores.subspan(t * n, n), options.k);
    for (auto i : top) m[t * n + i] = 1.0;
    out.selected.push_back(std::move(top));
  }
  out.gates = mul(out.probs, mask);
  if (options.renormalize) out.gates = div(out.gates, sum(out.gates, 1));
  return out;
}

RouterOutput vanilla_route(const Tensor& x, const RouterParams& params, std::size_t k) {
  RouterOptions options;
  options.k = k;
  return route(x, std::nullopt, params, options);
}

}  // namespace moepp
