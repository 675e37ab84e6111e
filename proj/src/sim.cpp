#include "moepp/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace moepp {

std::vector<std::size_t> Placement::ffn_experts_on(std::size_t device) const {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < ffn_device.size(); ++e)
    if (ffn_device[e] == device) out.push_back(e);
  return out;
}

Placement make_placement(const LayerConfig& cfg, std::size_t devices) {
  if (devices == 0) throw ArgumentError("placement needs at least one device");
  Placement p;
  p.devices = devices;
  p.n_zc = cfg.n_zc();
  for (std::size_t e = 0; e < cfg.n_ffn; ++e) p.ffn_device.push_back(e % devices);
  return p;
}

double complexity_ratio(double tau, std::size_t n_ffn, std::size_t n_zc) {
  if (!(tau > 0.0)) throw ArgumentError("tau must be positive");
  if (n_ffn == 0) throw ArgumentError("complexity ratio needs at least one FFN expert");
  const double f = tau * double(n_ffn);
  return f / (f + double(n_zc));
}

double complexity_ratio(const LayerConfig& cfg) { return complexity_ratio(cfg.tau, cfg.n_ffn, cfg.n_zc()); }

CostReport simulate(const std::vector<DispatchPlan>& plans, const LayerConfig& cfg, const Placement& placement,
                    const CostModel& cost) {
  if (placement.ffn_device.size() != cfg.n_ffn || placement.n_zc != cfg.n_zc()) {
    throw ArgumentError("simulate: placement does not match layer config");
  }
  CostReport r;
  r.predicted_ratio = complexity_ratio(cfg);
  r.device_load.assign(placement.devices, 0.0);
  for (const auto& plan : plans) {
    if (plan.experts() != cfg.n_experts()) {
      throw ArgumentError("simulate: plan has " + std::to_string(plan.experts()) + " experts, config has " +
                          std::to_string(cfg.n_experts()));
    }
    const std::size_t t_count = plan.tokens();
    r.routed_slots += cfg.k * t_count;
    r.dropped_pairs += plan.dropped_pairs();
    for (std::size_t e = 0; e < plan.experts(); ++e) {
      const auto kind = cfg.kind_of(e);
      const std::size_t n = plan.assigned[e].size();
      if (kind == ExpertKind::FFN) {
        r.ffn_assignments += n;
        r.ffn_flops += double(n) * cost.flops_per_ffn_token();
        const std::size_t dev = placement.device_of_ffn(e);
        r.device_load[dev] += double(n);
        for (auto t : plan.assigned[e]) {
          const std::size_t home = t * placement.devices / t_count;
          if (home != dev) ++r.remote_tokens;
        }
      } else {
        r.zc_assignments += n;
        r.constant_flops += double(n) * cost.flops_per_zc_token(kind);
      }
    }
  }
  if (r.routed_slots > 0) r.empirical_ratio = double(r.ffn_assignments) / double(r.routed_slots);
  r.remote_bytes = double(r.remote_tokens) * cost.bytes_per_token();
  const double total = std::accumulate(r.device_load.begin(), r.device_load.end(), 0.0);
  const double mean = total / double(placement.devices);
  if (mean > 0.0) r.load_imbalance = *std::max_element(r.device_load.begin(), r.device_load.end()) / mean;
  return r;
}

const std::vector<ThroughputReference>& throughput_reference() {
  static const std::vector<ThroughputReference> rows = [] {
    std::vector<ThroughputReference> out;
    const double taus[] = {0.10, 0.25, 0.50, 0.75, 1.00};
    const double small[] = {164.5, 92.7, 38.2, 25.2, 19.1};
    const double mid[] = {111.2, 58.7, 30.1, 22.1, 15.2};
    const double large[] = {63.5, 44.3, 28.3, 21.8, 15.7};
    for (int i = 0; i < 5; ++i) out.push_back({"0.6B/(8+4)E", 8, 4, taus[i], small[i]});
    for (int i = 0; i < 5; ++i) out.push_back({"1B/(16+4)E", 16, 4, taus[i], mid[i]});
    for (int i = 0; i < 5; ++i) out.push_back({"2B/(32+8)E", 32, 8, taus[i], large[i]});
    out.push_back({"7B/(16+4)E", 16, 4, 0.75, 27.8});
    return out;
  }();
  return rows;
}

std::vector<SweepRow> tau_sweep(const LayerConfig& base, const std::vector<double>& taus) {
  std::vector<SweepRow> rows;
  for (double tau : taus) {
    if (!(tau > 0.0)) throw ArgumentError("tau values must be positive");
    SweepRow row{tau, complexity_ratio(tau, base.n_ffn, base.n_zc()), 0.0, std::nullopt};
    row.predicted_speedup_pct = (1.0 / row.ratio - 1.0) * 100.0;
    for (const auto& ref : throughput_reference()) {
      if (ref.n_ffn == base.n_ffn && ref.n_zc == base.n_zc() && std::abs(ref.tau - tau) < 1e-12) {
        row.measured_increase_pct = ref.measured_increase_pct;
        break;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "tau,complexity_ratio,predicted_speedup_pct,measured_increase_pct\n";
  for (const auto& r : rows) {
    out << r.tau << ',' << r.ratio << ',' << r.predicted_speedup_pct << ',';
    if (r.measured_increase_pct) out << *r.measured_increase_pct;
    out << '\n';
  }
  return out.str();
}

std::string report_text(const CostReport& r, const LayerConfig& cfg, const Placement& placement,
                        const CostModel& cost) {
  std::ostringstream out;
  out.precision(10);
  out << "# FLOPs: 2 per multiply-accumulate; FFN token = " << cost.flops_per_ffn_token()
      << ", constant-expert token = " << cost.flops_per_zc_token(ExpertKind::Constant) << "\n";
  out << "# bytes per token = " << cost.bytes_per_token() << "\n";
  out << "experts: " << cfg.n_ffn << " FFN + " << cfg.n_zc() << " zero-computation, K=" << cfg.k
      << ", tau=" << cfg.tau << ", devices=" << placement.devices << "\n";
  out << "routed_slots " << r.routed_slots << "\n";
  out << "ffn_assignments " << r.ffn_assignments << "\n";
  out << "zc_assignments " << r.zc_assignments << "\n";
  out << "dropped_pairs " << r.dropped_pairs << "\n";
  out << "empirical_ratio " << r.empirical_ratio << "\n";
  out << "predicted_ratio " << r.predicted_ratio << "\n";
  out << "ffn_flops " << r.ffn_flops << "\n";
  out << "constant_flops " << r.constant_flops << "\n";
  out << "remote_tokens " << r.remote_tokens << "\n";
  out << "remote_bytes " << r.remote_bytes << "\n";
  out << "zc_remote_bytes " << r.zc_remote_bytes << "\n";
  out << "device_load";
  for (double d : r.device_load) out << ' ' << d;
  out << "\nload_imbalance " << r.load_imbalance << "\n";
  return out.str();
}

}  // namespace moepp
