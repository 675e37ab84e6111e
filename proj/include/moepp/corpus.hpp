#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "moepp/model.hpp"

namespace moepp {

/// Token stream over a small closed vocabulary. `alphabet[id]` is the
/// character an id stands for when the corpus came from text.
struct Corpus {
  std::vector<std::size_t> tokens;
  std::size_t vocab = 0;
  std::string tag;
  std::string alphabet;
};

/// One random `period`-symbol motif, repeated to `length` tokens.
Corpus repeated_pattern_corpus(std::size_t length, std::size_t vocab, std::uint64_t seed, std::size_t period = 64);
/// Each step moves -1, 0 or +1 (mod vocab).
Corpus random_walk_corpus(std::size_t length, std::size_t vocab, std::uint64_t seed);
/// i.i.d. uniform ids.
Corpus uniform_corpus(std::size_t length, std::size_t vocab, std::uint64_t seed);
/// Character-level corpus from a text file; the vocabulary is the sorted
/// set of distinct bytes. Throws ArgumentError naming the path if missing.
Corpus text_file_corpus(const std::string& path);

/// Named synthetic family: "pattern", "random-walk" or "uniform".
Corpus synthetic_corpus(const std::string& kind, std::size_t length, std::size_t vocab, std::uint64_t seed);

/// First `fraction` of the stream and the rest.
std::pair<Corpus, Corpus> split_corpus(const Corpus& c, double fraction);

/// `batch` random windows of `window` consecutive tokens.
TokenBatch sample_windows(const Corpus& c, std::size_t batch, std::size_t window, std::mt19937_64& rng);
/// Consecutive non-overlapping windows from the start, for evaluation.
std::vector<TokenBatch> sequential_batches(const Corpus& c, std::size_t batch, std::size_t window);

}  // namespace moepp
