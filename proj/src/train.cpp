#include "moepp/train.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>

#include "moepp/autograd.hpp"
#include "moepp/ops.hpp"

namespace moepp {

Trainer::Trainer(Model& model, TrainConfig cfg)
    : model_(model), cfg_(cfg), optimizer_(model.parameters(), cfg.optim), rng_(cfg.seed) {
  if (cfg_.steps == 0) throw ArgumentError("steps must be >= 1");
  if (cfg_.batch == 0) throw ArgumentError("batch must be >= 1");
  if (cfg_.beta < 0.0) throw ArgumentError("beta must be >= 0");
}

StepMetrics Trainer::step(const TokenBatch& windows) {
  StepMetrics m;
  m.step = optimizer_.steps_taken();
  auto [inputs, targets] = split_inputs_targets(windows);
  try {
    optimizer_.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    auto out = model_.forward(inputs);
    Tensor ce = cross_entropy(out.logits, targets);
    Tensor loss = total_loss(ce, out.lb, cfg_.beta);
    m.ce = ce.item();
    m.lb = out.lb.item();
    m.loss = loss.item();
    if (!std::isfinite(m.loss)) throw NumericalError("non-finite loss");
    tape.backward(loss);
    m.lr = learning_rate(cfg_.optim, m.step);
    m.grad_norm = optimizer_.step();
    std::size_t kept = 0, dropped = 0;
    for (const auto& layer : out.layers) {
      kept += layer.plan.kept_pairs();
      dropped += layer.plan.dropped_pairs();
      m.f.push_back(layer.stats.f);
      m.layer_drop_rate.push_back(layer.plan.drop_rate());
    }
    m.drop_rate = double(dropped) / double(kept + dropped);
  } catch (const NumericalError& e) {
    throw NumericalError("training diverged at step " + std::to_string(m.step) + ": " + e.what());
  }
  return m;
}

std::vector<StepMetrics> Trainer::run(const Corpus& corpus, const std::function<void(const StepMetrics&)>& sink) {
  if (corpus.vocab > model_.config().vocab) throw ArgumentError("corpus vocab exceeds model vocab");
  std::vector<StepMetrics> all;
  const std::size_t window = model_.config().seq_len + 1;
  while (steps_done() < cfg_.steps) {
    auto m = step(sample_windows(corpus, cfg_.batch, window, rng_));
    if (sink) sink(m);
    all.push_back(std::move(m));
  }
  return all;
}

double evaluate_perplexity(const Model& model, const Corpus& corpus, std::size_t batch) {
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& windows : sequential_batches(corpus, batch, model.config().seq_len + 1)) {
    auto [inputs, targets] = split_inputs_targets(windows);
    auto out = model.forward(inputs);
    nll += cross_entropy(out.logits, targets).item() * double(targets.size());
    count += targets.size();
  }
  if (count == 0) throw ArgumentError("evaluation corpus shorter than one window");
  return std::exp(nll / double(count));
}

double ffn_load_ratio(const std::vector<double>& f, std::size_t n_ffn) {
  if (n_ffn == 0 || f.size() < n_ffn) throw ArgumentError("ffn_load_ratio: bad expert count");
  auto [lo, hi] = std::minmax_element(f.begin(), f.begin() + n_ffn);
  if (*lo <= 0.0) return std::numeric_limits<double>::infinity();
  return *hi / *lo;
}

std::string metrics_json_line(const StepMetrics& m) {
  nlohmann::json j{{"step", m.step}, {"ce", m.ce},     {"lb", m.lb},
                   {"loss", m.loss}, {"drop_rate", m.drop_rate}, {"lr", m.lr},
                   {"grad_norm", m.grad_norm}, {"layer_drop_rate", m.layer_drop_rate}, {"f", m.f}};
  return j.dump();
}

}  // namespace moepp
