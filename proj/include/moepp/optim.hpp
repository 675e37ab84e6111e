#pragma once

#include <cstddef>
#include <vector>

#include "moepp/tensor.hpp"

namespace moepp {

struct AdamWConfig {
  double lr = 3e-3;  // peak
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::size_t warmup_steps = 20;
  std::size_t total_steps = 200;
  double final_lr_ratio = 0.1;
};

/// Linear warmup to `lr`, then cosine decay to `lr * final_lr_ratio` at
/// `total_steps`. `step` is 0-based.
double learning_rate(const AdamWConfig& cfg, std::size_t step);

/// Adam with decoupled weight decay. Decay applies to 2-D parameters only
/// (norm gains, biases and vectors are left alone).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  /// Clips, updates and returns the pre-clip global gradient norm.
  /// Parameters without a gradient are skipped.
  double step();
  void zero_grad();

  std::size_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace moepp
