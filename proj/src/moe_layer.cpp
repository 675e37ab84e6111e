#include "moepp/moe_layer.hpp"

#include <algorithm>
#include <cmath>

#include "moepp/ops.hpp"

namespace moepp {

ExpertKind LayerConfig::kind_of(std::size_t expert) const {
  if (expert < n_ffn) return ExpertKind::FFN;
  expert -= n_ffn;
  if (expert < n_zero) return ExpertKind::Zero;
  expert -= n_zero;
  if (expert < n_copy) return ExpertKind::Copy;
  expert -= n_copy;
  if (expert < n_const) return ExpertKind::Constant;
  throw ArgumentError("expert index out of range");
}

double LayerConfig::eta(std::size_t expert) const {
  return is_zero_computation(kind_of(expert)) ? tau : 1.0;
}

void LayerConfig::validate() const {
  if (n_experts() == 0) throw ArgumentError("layer needs at least one expert");
  if (k < 1 || k > n_experts()) {
    throw ArgumentError("K=" + std::to_string(k) + " must lie in [1, N=" + std::to_string(n_experts()) + "]");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("tau must be positive");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ArgumentError("gamma must be positive");
}

LayerConfig LayerConfig::vanilla(std::size_t n_ffn, std::size_t k) {
  LayerConfig cfg;
  cfg.n_ffn = n_ffn;
  cfg.n_zero = cfg.n_copy = cfg.n_const = 0;
  cfg.k = k;
  cfg.tau = 1.0;
  cfg.residuals_enabled = false;
  return cfg;
}

std::size_t adaptive_constant_count(std::size_t n_ffn, std::size_t n_zero, std::size_t n_copy) {
  auto quarter = static_cast<long long>(n_ffn / 4);
  auto rest = quarter - static_cast<long long>(n_zero) - static_cast<long long>(n_copy);
  return static_cast<std::size_t>(std::max(rest, 1LL));
}

namespace {
// ceil() that does not bump values sitting on an integer by rounding error.
std::size_t ceil_snapped(double value) {
  double nearest = std::round(value);
  if (std::abs(value - nearest) <= 1e-12 * std::max(1.0, std::abs(value))) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(value));
}
}  // namespace

std::vector<std::size_t> capacity(const LayerConfig& cfg, std::size_t tokens) {
  cfg.validate();
  if (tokens < 1) throw ArgumentError("capacity: token count must be >= 1");
  const double t = static_cast<double>(tokens);
  const double denom = cfg.tau * static_cast<double>(cfg.n_ffn) + static_cast<double>(cfg.n_zc());
  const std::size_t ffn_cap = ceil_snapped(cfg.gamma * cfg.tau * t / denom);
  const std::size_t zc_cap = ceil_snapped(cfg.gamma * t / denom);
  std::vector<std::size_t> caps(cfg.n_experts());
  for (std::size_t i = 0; i < caps.size(); ++i) caps[i] = i < cfg.n_ffn ? ffn_cap : zc_cap;
  return caps;
}

std::size_t DispatchPlan::kept_pairs() const {
  std::size_t n = 0;
  for (const auto& k : kept) n += k.size();
  return n;
}

std::size_t DispatchPlan::dropped_pairs() const {
  std::size_t n = 0;
  for (const auto& d : dropped) n += d.size();
  return n;
}

double DispatchPlan::drop_rate() const {
  std::size_t total = kept_pairs() + dropped_pairs();
  return total ? static_cast<double>(dropped_pairs()) / static_cast<double>(total) : 0.0;
}

DispatchPlan dispatch(const std::vector<std::vector<std::size_t>>& selected, const Tensor& gates,
                      const std::vector<std::size_t>& capacities) {
  const std::size_t n = capacities.size();
  if (gates.dim() != 2 || gates.rows() != selected.size() || gates.cols() != n) {
    throw DimensionError("dispatch: gates " + shape_str(gates.shape()) + " do not match " +
                         std::to_string(selected.size()) + " tokens x " + std::to_string(n) + " experts");
  }
  DispatchPlan plan;
  plan.capacity = capacities;
  plan.assigned.resize(n);
  plan.kept.resize(selected.size());
  plan.dropped.resize(selected.size());
  auto g = gates.data();
  for (std::size_t t = 0; t < selected.size(); ++t) {
    for (auto e : selected[t]) {
      if (e >= n) throw ArgumentError("dispatch: expert index " + std::to_string(e) + " out of range");
      RoutedPair pair{e, g[t * n + e]};
      if (plan.assigned[e].size() < capacities[e]) {
        plan.assigned[e].push_back(t);
        plan.kept[t].push_back(pair);
      } else {
        plan.dropped[t].push_back(pair);
      }
    }
  }
  return plan;
}

DispatchPlan dispatch(const RouterOutput& routing, const std::vector<std::size_t>& capacities) {
  return dispatch(routing.selected, routing.gates, capacities);
}

LoadStats load_stats(const RouterOutput& routing, const DispatchPlan& plan, const LayerConfig& cfg) {
  const std::size_t n = cfg.n_experts();
  const std::size_t t_count = routing.selected.size();
  if (routing.probs.cols() != n) throw DimensionError("load_stats: routing width does not match config");
  LoadStats s;
  s.f.assign(n, 0.0);
  s.eta.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.eta[i] = cfg.eta(i);
  if (cfg.count_dropped_in_load) {
    for (const auto& sel : routing.selected)
      for (auto e : sel) s.f[e] += 1.0;
  } else {
    for (const auto& kept : plan.kept)
      for (const auto& pair : kept) s.f[pair.expert] += 1.0;
  }
  for (auto& v : s.f) v /= static_cast<double>(t_count);
  s.p_tensor = mean(routing.probs, 0);
  s.p.assign(s.p_tensor.data().begin(), s.p_tensor.data().end());
  return s;
}

Tensor load_balance_loss(const LoadStats& stats) {
  const std::size_t n = stats.f.size();
  if (stats.eta.size() != n || stats.p_tensor.numel() != n) throw DimensionError("load_balance_loss: size mismatch");
  std::vector<double> coef(n);
  for (std::size_t i = 0; i < n; ++i) coef[i] = stats.eta[i] * stats.f[i];
  return sum(mul(stats.p_tensor, Tensor({1, n}, std::move(coef))));
}

Tensor load_balance_loss(const LoadStats& stats, const LayerConfig& cfg) {
  if (stats.f.size() != cfg.n_experts()) throw DimensionError("load_balance_loss: stats do not match config");
  LoadStats weighted = stats;
  weighted.eta.resize(cfg.n_experts());
  for (std::size_t i = 0; i < weighted.eta.size(); ++i) weighted.eta[i] = cfg.eta(i);
  return load_balance_loss(weighted);
}

Tensor total_loss(const Tensor& ce, const Tensor& lb, double beta) {
  if (beta < 0.0) throw ArgumentError("beta must be >= 0");
  return add(ce, scale(lb, beta));
}

LayerParams make_layer_params(const LayerConfig& cfg, std::size_t hidden, std::size_t intermediate,
                              bool with_residual, std::mt19937_64& rng) {
  cfg.validate();
  LayerParams p;
  p.router = make_router_params(cfg.n_experts(), hidden, with_residual, rng);
  p.experts.reserve(cfg.n_experts());
  for (std::size_t i = 0; i < cfg.n_experts(); ++i) {
    p.experts.emplace_back(ExpertSpec{cfg.kind_of(i), hidden, intermediate, cfg.ffn_activation}, rng);
  }
  return p;
}

LayerOutput layer_forward(const Tensor& x, const std::optional<Tensor>& prev_logits, const LayerConfig& cfg,
                          const LayerParams& params) {
  cfg.validate();
  if (x.dim() != 2) throw DimensionError("layer_forward: x must be T x D, got " + shape_str(x.shape()));
  if (params.experts.size() != cfg.n_experts() || params.router.w.rows() != cfg.n_experts()) {
    throw DimensionError("layer_forward: parameters do not match layer config");
  }
  const std::size_t t_count = x.shape()[0];

  RouterOptions options;
  options.k = cfg.k;
  options.renormalize = cfg.renormalize_gates;
  options.detach_previous = cfg.detach_residual;
  std::optional<Tensor> prev = (cfg.residuals_enabled && params.router.w_g) ? prev_logits : std::nullopt;

  LayerOutput out;
  out.routing = route(x, prev, params.router, options);
  // Capacity is shared out over the K*T routed (token, expert) slots.
  out.plan = dispatch(out.routing, capacity(cfg, cfg.k * t_count));
  out.stats = load_stats(out.routing, out.plan, cfg);

  Tensor y = Tensor::zeros(x.shape());
  for (std::size_t e = 0; e < cfg.n_experts(); ++e) {
    const auto& tokens = out.plan.assigned[e];
    if (tokens.empty() || params.experts[e].kind() == ExpertKind::Zero) continue;
    Tensor xe = gather_rows(x, tokens);
    Tensor ye = params.experts[e].forward(xe);
    std::vector<std::size_t> cols(tokens.size(), e);
    Tensor ge = gather_elements(out.routing.gates, tokens, cols);
    y = index_add_rows(y, mul(ye, ge), tokens);
  }
  std::vector<std::size_t> passthrough;
  for (std::size_t t = 0; t < t_count; ++t) {
    if (out.plan.kept[t].empty()) passthrough.push_back(t);
  }
  if (!passthrough.empty()) y = index_add_rows(y, gather_rows(x, passthrough), passthrough);
  out.y = y;
  return out;
}

}  // namespace moepp
