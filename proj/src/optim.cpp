#include "moepp/optim.hpp"

#include <cmath>
#include <numbers>

namespace moepp {

double learning_rate(const AdamWConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) return cfg.lr * double(step + 1) / double(cfg.warmup_steps);
  const double floor = cfg.lr * cfg.final_lr_ratio;
  if (step >= cfg.total_steps) return floor;
  const std::size_t span = cfg.total_steps - cfg.warmup_steps;
  if (span == 0) return floor;
  double progress = double(step - cfg.warmup_steps) / double(span);
  return floor + 0.5 * (cfg.lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw ArgumentError("lr must be > 0");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
    throw ArgumentError("Adam betas must lie in [0, 1)");
  }
  if (cfg_.weight_decay < 0.0) throw ArgumentError("weight_decay must be >= 0");
  for (auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double AdamW::step() {
  double sq = 0.0;
  for (auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("AdamW: non-finite gradient norm");
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  const double lr = learning_rate(cfg_, t_);
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const bool decay = p.shape().size() == 2;
    const auto& g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double gj = g[j] * clip;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      if (decay) w[j] -= lr * cfg_.weight_decay * w[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
  return norm;
}

}  // namespace moepp
