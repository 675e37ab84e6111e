#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "moepp/tensor.hpp"

namespace moepp {

/// Router weights of one layer. `w_g` (N x N) carries the gating residual and
/// exists only for layers after the first when residuals are enabled.
struct RouterParams {
  Tensor w;  // N x D
  std::optional<Tensor> w_g;
};

/// W ~ N(0, 0.02); W_g = 0.1 * I when requested.
RouterParams make_router_params(std::size_t n_experts, std::size_t hidden, bool with_residual,
                                std::mt19937_64& rng);

struct RouterOptions {
  std::size_t k = 2;
  /// Rescale retained gates to sum to one. Off by default: the retained
  /// gates are the raw full-softmax probabilities.
  bool renormalize = false;
  /// Stop gradients at the previous layer's logits.
  bool detach_previous = false;
};

struct RouterOutput {
  Tensor logits;  // T x N, fed to the next layer's residual
  Tensor probs;   // T x N full softmax
  Tensor gates;   // T x N, exactly k nonzeros per row
  std::vector<std::vector<std::size_t>> selected;  // per token, k indices in descending score order
};

/// logits = x W^T (+ prev W_g^T), probs = softmax(logits), gates = probs masked
/// to each row's top-k.
RouterOutput route(const Tensor& x, const std::optional<Tensor>& prev_logits, const RouterParams& params,
                   const RouterOptions& options);

/// Baseline routing without any gating residual; W_g, if present, is ignored.
RouterOutput vanilla_route(const Tensor& x, const RouterParams& params, std::size_t k);

}  // namespace moepp
