#pragma once

// Test-only reference implementations for the MoE++ layer: a dense per-token
// evaluation of the gated sum and an independent dispatch bookkeeper.

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "moepp/moe_layer.hpp"
#include "moepp/ops.hpp"

namespace moepp::testing {

/// y_t = sum_i g_ti * E_i(x_t), one token at a time, no dispatch machinery.
/// Gates are recomputed from scratch with explicit loops.
inline std::vector<std::vector<double>> dense_layer_oracle(const Tensor& x, const std::optional<Tensor>& prev,
                                                           const LayerConfig& cfg, const LayerParams& params) {
  const std::size_t t_count = x.rows(), d = x.cols(), n = cfg.n_experts();
  std::vector<std::vector<double>> y(t_count, std::vector<double>(d, 0.0));
  for (std::size_t t = 0; t < t_count; ++t) {
    std::vector<double> logit(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) logit[i] += x.at(t, c) * params.router.w.at(i, c);
    if (prev && cfg.residuals_enabled && params.router.w_g) {
      for (std::size_t i = 0; i < n; ++i) {
        double extra = 0.0;
        for (std::size_t j = 0; j < n; ++j) extra += prev->at(t, j) * params.router.w_g->at(i, j);
        logit[i] += extra;
      }
    }
    double mx = logit[0];
    for (double v : logit) mx = std::max(mx, v);
    std::vector<double> p(n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (p[i] = std::exp(logit[i] - mx));
    std::set<std::size_t> chosen;
    for (std::size_t r = 0; r < cfg.k; ++r) {
      std::size_t best = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen.count(i)) continue;
        if (best == n || logit[i] > logit[best]) best = i;
      }
      chosen.insert(best);
    }
    Tensor row = slice_rows(x, t, t + 1);
    for (std::size_t i : chosen) {
      double g = p[i] / z;
      Tensor e = params.experts[i].forward(row);
      for (std::size_t c = 0; c < d; ++c) y[t][c] += g * e.at(0, c);
    }
  }
  return y;
}

/// Per expert, keep the first C_e (token, expert) pairs in token order and
/// drop the rest. Returns the set of dropped (token, expert) pairs.
inline std::set<std::pair<std::size_t, std::size_t>> dropped_pairs_oracle(
    const std::vector<std::vector<std::size_t>>& selected, const std::vector<std::size_t>& capacities) {
  std::set<std::pair<std::size_t, std::size_t>> dropped;
  for (std::size_t e = 0; e < capacities.size(); ++e) {
    std::size_t seen = 0;
    for (std::size_t t = 0; t < selected.size(); ++t) {
      for (auto s : selected[t]) {
        if (s != e) continue;
        if (++seen > capacities[e]) dropped.insert({t, e});
      }
    }
  }
  return dropped;
}

// Params whose router reads the first N input columns verbatim, so a token's
// logits are whatever is written into those columns.
inline LayerParams steerable_params(const LayerConfig& cfg, std::size_t d, std::size_t d_int, std::mt19937_64& rng) {
  auto params = make_layer_params(cfg, d, d_int, false, rng);
  const std::size_t n = cfg.n_experts();
  std::vector<double> w(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) w[i * d + i] = 1.0;
  params.router.w = Tensor({n, d}, w, true);
  // Non-trivial expert weights.
  for (auto& e : params.experts) {
    for (auto& [name, t] : e.named_parameters()) {
      std::normal_distribution<double> dist(0.0, 0.5);
      for (auto& v : t.mutable_data()) v = dist(rng);
    }
  }
  return params;
}

// Row whose first N entries make experts a and b the top-2.
inline std::vector<double> steer_row(std::size_t n, std::size_t d, std::size_t a, std::size_t b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> low(-1.0, 1.0), high(2.0, 3.0);
  std::normal_distribution<double> feat(0.0, 1.0);
  std::vector<double> row(d);
  for (std::size_t c = 0; c < d; ++c) row[c] = c < n ? low(rng) : feat(rng);
  row[a] = high(rng) + 1.5;
  row[b] = high(rng);
  return row;
}

}  // namespace moepp::testing
