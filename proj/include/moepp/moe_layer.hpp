#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "moepp/experts.hpp"
#include "moepp/router.hpp"
#include "moepp/tensor.hpp"

namespace moepp {

/// Expert mix and routing hyper-parameters of one MoE++ layer.
///
/// Experts are laid out in a fixed order: FFN experts first, then zero,
/// copy and constant experts. Zero-computation experts are everything after
/// the FFN block.
struct LayerConfig {
  std::size_t n_ffn = 8;
  std::size_t n_zero = 1;
  std::size_t n_copy = 1;
  std::size_t n_const = 2;
  std::size_t k = 2;
  double tau = 0.75;
  double gamma = 1.1;
  Activation ffn_activation = Activation::Gelu;
  bool residuals_enabled = true;
  bool renormalize_gates = false;
  bool detach_residual = false;
  /// When false, f_i counts only pairs that survived capacity.
  bool count_dropped_in_load = true;

  std::size_t n_zc() const { return n_zero + n_copy + n_const; }
  std::size_t n_experts() const { return n_ffn + n_zc(); }
  ExpertKind kind_of(std::size_t expert) const;
  /// Load-balance weight: 1 for FFN experts, tau for zero-computation experts.
  double eta(std::size_t expert) const;
  void validate() const;

  /// Homogeneous top-k MoE with no zero-computation experts and no residuals.
  static LayerConfig vanilla(std::size_t n_ffn, std::size_t k = 2);
};

/// max(n_ffn / 4 - n_zero - n_copy, 1) with integer division.
std::size_t adaptive_constant_count(std::size_t n_ffn, std::size_t n_zero, std::size_t n_copy);

/// Per-expert token capacity for `tokens` routed tokens:
///   FFN: ceil(gamma * tau * tokens / (tau * N_FFN + N_ZC))
///   ZC:  ceil(gamma * tokens / (tau * N_FFN + N_ZC))
std::vector<std::size_t> capacity(const LayerConfig& cfg, std::size_t tokens);

struct RoutedPair {
  std::size_t expert;
  double gate;
};

/// Token-to-expert assignment after capacity enforcement.
struct DispatchPlan {
  std::vector<std::size_t> capacity;               // per expert
  std::vector<std::vector<std::size_t>> assigned;  // per expert, token ids in arrival order
  std::vector<std::vector<RoutedPair>> kept;       // per token
  std::vector<std::vector<RoutedPair>> dropped;    // per token

  std::size_t tokens() const { return kept.size(); }
  std::size_t experts() const { return capacity.size(); }
  std::size_t pad(std::size_t expert) const { return capacity[expert] - assigned[expert].size(); }
  std::size_t kept_pairs() const;
  std::size_t dropped_pairs() const;
  /// dropped / (kept + dropped).
  double drop_rate() const;
};

/// Greedy dispatch in token order: a (token, expert) pair takes a slot if
/// the expert still has one, otherwise it is dropped.
DispatchPlan dispatch(const std::vector<std::vector<std::size_t>>& selected, const Tensor& gates,
                      const std::vector<std::size_t>& capacities);
DispatchPlan dispatch(const RouterOutput& routing, const std::vector<std::size_t>& capacities);

struct LoadStats {
  std::vector<double> f;    // fraction of tokens selecting each expert; sums to K
  std::vector<double> p;    // mean full-softmax probability per expert; sums to 1
  std::vector<double> eta;  // per-expert loss weight
  Tensor p_tensor;          // 1 x N, differentiable copy of `p`
};

LoadStats load_stats(const RouterOutput& routing, const DispatchPlan& plan, const LayerConfig& cfg);

/// sum_i eta_i f_i P_i; f_i is a constant, gradients flow through P_i.
Tensor load_balance_loss(const LoadStats& stats);
Tensor load_balance_loss(const LoadStats& stats, const LayerConfig& cfg);

/// ce + beta * lb.
Tensor total_loss(const Tensor& ce, const Tensor& lb, double beta);

struct LayerParams {
  RouterParams router;
  std::vector<Expert> experts;
};

/// Router plus one Expert per slot of `cfg`. The residual transform is
/// created only when `with_residual` is set.
LayerParams make_layer_params(const LayerConfig& cfg, std::size_t hidden, std::size_t intermediate,
                              bool with_residual, std::mt19937_64& rng);

struct LayerOutput {
  Tensor y;  // T x D
  RouterOutput routing;
  DispatchPlan plan;
  LoadStats stats;
};

/// Routes, enforces capacity over the K*T routed slots, and combines
///   y_t = sum over kept (i, g) of g * E_i(x_t).
/// A token whose pairs were all dropped passes through unchanged (y_t = x_t).
LayerOutput layer_forward(const Tensor& x, const std::optional<Tensor>& prev_logits, const LayerConfig& cfg,
                          const LayerParams& params);

}  // namespace moepp
