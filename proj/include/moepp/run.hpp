#pragma once

// Glue shared by the CLI, the acceptance harness and the Python module:
// every random stream of a run is derived from the single configured seed.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "moepp/config.hpp"
#include "moepp/corpus.hpp"
#include "moepp/model.hpp"
#include "moepp/train.hpp"

namespace moepp {

/// splitmix64 of (seed, stream): independent streams from one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

enum SeedStream : std::uint64_t { kModelInit = 1, kCorpus = 2, kSampling = 3 };

/// Training corpus (first part) and held-out corpus (last eval_fraction).
std::pair<Corpus, Corpus> make_corpora(const RunConfig& cfg);

std::unique_ptr<Model> make_model(const RunConfig& cfg);

struct RunResult {
  std::unique_ptr<Model> model;
  std::unique_ptr<Trainer> trainer;  // holds optimizer state for checkpoints
  std::vector<StepMetrics> metrics;
  Corpus train, heldout;
};

/// Builds corpus and model from `cfg` and trains for cfg.train.steps.
RunResult train_run(const RunConfig& cfg, const std::function<void(const StepMetrics&)>& sink = {});

/// Held-out windows used for traces and load measurements.
std::vector<TokenBatch> heldout_batches(const RunConfig& cfg, const Corpus& heldout, std::size_t max_batches);

}  // namespace moepp
