#include "moepp/run.hpp"

namespace moepp {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::pair<Corpus, Corpus> make_corpora(const RunConfig& cfg) {
  Corpus full;
  if (cfg.corpus.kind == "file") {
    try {
      full = text_file_corpus(cfg.corpus.path);
    } catch (const ArgumentError& e) {
      throw ConfigError("train.corpus.path", e.what());
    }
    if (full.vocab > cfg.model.vocab) {
      throw ConfigError("model.vocab", "corpus " + cfg.corpus.path + " has " + std::to_string(full.vocab) +
                                           " distinct symbols, more than vocab " + std::to_string(cfg.model.vocab));
    }
  } else {
    full = synthetic_corpus(cfg.corpus.kind, cfg.corpus.length, cfg.model.vocab,
                            derive_seed(cfg.train.seed, kCorpus));
  }
  auto parts = split_corpus(full, 1.0 - cfg.corpus.eval_fraction);
  const std::size_t window = cfg.model.seq_len + 1;
  if (parts.first.tokens.size() < window || parts.second.tokens.size() < window) {
    throw ConfigError("train.corpus", "corpus too short for seq_len " + std::to_string(cfg.model.seq_len));
  }
  return parts;
}

std::unique_ptr<Model> make_model(const RunConfig& cfg) {
  return std::make_unique<Model>(cfg.model, derive_seed(cfg.train.seed, kModelInit));
}

RunResult train_run(const RunConfig& cfg, const std::function<void(const StepMetrics&)>& sink) {
  RunResult r;
  std::tie(r.train, r.heldout) = make_corpora(cfg);
  r.model = make_model(cfg);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.train.seed, kSampling);
  tc.optim.total_steps = tc.steps;
  r.trainer = std::make_unique<Trainer>(*r.model, tc);
  r.metrics = r.trainer->run(r.train, sink);
  return r;
}

std::vector<TokenBatch> heldout_batches(const RunConfig& cfg, const Corpus& heldout, std::size_t max_batches) {
  std::vector<TokenBatch> out;
  for (auto& b : sequential_batches(heldout, cfg.train.batch, cfg.model.seq_len + 1)) {
    if (out.size() == max_batches) break;
    out.push_back(split_inputs_targets(b).first);
  }
  return out;
}

}  // namespace moepp
