#pragma once

// Analytical expert-layer cost model. FLOPs count 2 per multiply-accumulate;
// communication is token count times bytes per token (no latency model).

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "moepp/moe_layer.hpp"

namespace moepp {

struct CostModel {
  std::size_t hidden = 0;
  std::size_t intermediate = 0;
  std::size_t float_bytes = 8;

  /// Two D x D_int matmuls: 2 * D * D_int MACs, 2 FLOPs each.
  double flops_per_ffn_token() const { return 2.0 * double(hidden) * double(intermediate) * 2.0; }
  /// Zero and copy experts are free; the constant expert pays for W_c x.
  double flops_per_zc_token(ExpertKind kind) const { return kind == ExpertKind::Constant ? 2.0 * 2.0 * double(hidden) : 0.0; }
  double bytes_per_token() const { return double(hidden) * double(float_bytes); }
};

/// FFN experts go round-robin over devices; every device holds a replica of
/// every zero-computation expert.
struct Placement {
  std::size_t devices = 1;
  std::vector<std::size_t> ffn_device;  // FFN expert -> device
  std::size_t n_zc = 0;

  std::size_t device_of_ffn(std::size_t expert) const { return ffn_device.at(expert); }
  std::vector<std::size_t> ffn_experts_on(std::size_t device) const;
};

Placement make_placement(const LayerConfig& cfg, std::size_t devices);

struct CostReport {
  std::size_t routed_slots = 0;   // K * T summed over plans
  std::size_t ffn_assignments = 0;
  std::size_t zc_assignments = 0;
  std::size_t dropped_pairs = 0;
  double empirical_ratio = 0.0;  // ffn_assignments / routed_slots
  double predicted_ratio = 0.0;  // complexity_ratio(cfg)
  double ffn_flops = 0.0;
  double constant_flops = 0.0;
  std::vector<double> device_load;  // FFN tokens processed per device
  std::size_t remote_tokens = 0;    // token copies sent to another device
  double remote_bytes = 0.0;
  double zc_remote_bytes = 0.0;  // stays 0 by construction
  double load_imbalance = 1.0;   // max / mean device load
};

/// tau * N_FFN / (tau * N_FFN + N_ZC).
double complexity_ratio(const LayerConfig& cfg);
double complexity_ratio(double tau, std::size_t n_ffn, std::size_t n_zc);

/// Tokens are home on device floor(t * E / T) of their plan. A kept pair on
/// an FFN expert living elsewhere costs one token of traffic.
CostReport simulate(const std::vector<DispatchPlan>& plans, const LayerConfig& cfg, const Placement& placement,
                    const CostModel& cost);

struct ThroughputReference {
  std::string model;
  std::size_t n_ffn;
  std::size_t n_zc;
  double tau;
  double measured_increase_pct;  // reported throughput increase vs vanilla MoE
};

/// Measured expert-forward throughput increases of MoE++ over vanilla MoE,
/// one row per (model, tau).
const std::vector<ThroughputReference>& throughput_reference();

struct SweepRow {
  double tau;
  double ratio;
  double predicted_speedup_pct;  // (1 / ratio - 1) * 100
  std::optional<double> measured_increase_pct;
};

std::vector<SweepRow> tau_sweep(const LayerConfig& base, const std::vector<double>& taus);
std::string sweep_csv(const std::vector<SweepRow>& rows);
/// Plain-text report; the first line states the FLOP convention.
std::string report_text(const CostReport& report, const LayerConfig& cfg, const Placement& placement,
                        const CostModel& cost);

}  // namespace moepp
