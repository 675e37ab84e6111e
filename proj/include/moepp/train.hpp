#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "moepp/corpus.hpp"
#include "moepp/model.hpp"
#include "moepp/optim.hpp"

namespace moepp {

struct TrainConfig {
  std::size_t steps = 200;
  std::size_t batch = 8;
  double beta = 0.01;
  std::uint64_t seed = 0;
  AdamWConfig optim;
};

struct StepMetrics {
  std::size_t step = 0;
  double ce = 0.0;
  double lb = 0.0;
  double loss = 0.0;
  double drop_rate = 0.0;  // over all layers
  std::vector<double> layer_drop_rate;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::vector<std::vector<double>> f;  // per layer, per expert
};

/// Single-threaded training driver. All randomness (batch sampling) comes
/// from `cfg.seed`; model init has its own seed.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg);

  /// One optimizer step on `windows` (each row = inputs plus one target).
  /// Throws NumericalError naming the step on divergence.
  StepMetrics step(const TokenBatch& windows);

  /// Samples `cfg.steps - steps_done()` batches and trains on them.
  std::vector<StepMetrics> run(const Corpus& corpus, const std::function<void(const StepMetrics&)>& sink = {});

  std::size_t steps_done() const { return optimizer_.steps_taken(); }
  AdamW& optimizer() { return optimizer_; }
  std::mt19937_64& rng() { return rng_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  AdamW optimizer_;
  std::mt19937_64 rng_;
};

/// exp(mean next-token cross-entropy) over every window of `corpus`.
double evaluate_perplexity(const Model& model, const Corpus& corpus, std::size_t batch = 8);

/// FFN-expert load imbalance of one layer: max f_i / min f_i over FFN
/// experts (infinity if some FFN expert received nothing).
double ffn_load_ratio(const std::vector<double>& f, std::size_t n_ffn);

/// One JSON object per line.
std::string metrics_json_line(const StepMetrics& m);

}  // namespace moepp
