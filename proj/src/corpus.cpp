#include "moepp/corpus.hpp"

#include <fstream>
#include <iterator>
#include <set>

namespace moepp {

namespace {
std::string default_alphabet(std::size_t vocab) {
  static const std::string printable =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,;:!?-_+*/=()[]{}<>@#$%^&|~'\"`\\";
  if (vocab <= printable.size()) return printable.substr(0, vocab);
  return {};
}

void check_vocab(std::size_t vocab) {
  if (vocab < 2) throw ArgumentError("corpus vocab must be >= 2");
}
}  // namespace

Corpus repeated_pattern_corpus(std::size_t length, std::size_t vocab, std::uint64_t seed, std::size_t period) {
  check_vocab(vocab);
  if (period == 0) throw ArgumentError("pattern period must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, vocab - 1);
  std::vector<std::size_t> motif(period);
  for (auto& m : motif) m = pick(rng);
  Corpus c{{}, vocab, "pattern", default_alphabet(vocab)};
  c.tokens.reserve(length);
  for (std::size_t i = 0; i < length; ++i) c.tokens.push_back(motif[i % period]);
  return c;
}

Corpus random_walk_corpus(std::size_t length, std::size_t vocab, std::uint64_t seed) {
  check_vocab(vocab);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> move(-1, 1);
  Corpus c{{}, vocab, "random-walk", default_alphabet(vocab)};
  std::size_t at = vocab / 2;
  for (std::size_t i = 0; i < length; ++i) {
    c.tokens.push_back(at);
    at = (at + vocab + move(rng)) % vocab;
  }
  return c;
}

Corpus uniform_corpus(std::size_t length, std::size_t vocab, std::uint64_t seed) {
  check_vocab(vocab);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, vocab - 1);
  Corpus c{{}, vocab, "uniform", default_alphabet(vocab)};
  for (std::size_t i = 0; i < length; ++i) c.tokens.push_back(pick(rng));
  return c;
}

Corpus text_file_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot read corpus file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::set<unsigned char> seen(text.begin(), text.end());
  if (seen.size() < 2) throw ArgumentError("corpus file needs at least two distinct characters: " + path);
  Corpus c;
  c.tag = "text";
  std::vector<std::size_t> id(256, 0);
  for (unsigned char ch : seen) {
    id[ch] = c.alphabet.size();
    c.alphabet.push_back(static_cast<char>(ch));
  }
  c.vocab = c.alphabet.size();
  c.tokens.reserve(text.size());
  for (unsigned char ch : text) c.tokens.push_back(id[ch]);
  return c;
}

Corpus synthetic_corpus(const std::string& kind, std::size_t length, std::size_t vocab, std::uint64_t seed) {
  if (kind == "pattern") return repeated_pattern_corpus(length, vocab, seed);
  if (kind == "random-walk") return random_walk_corpus(length, vocab, seed);
  if (kind == "uniform") return uniform_corpus(length, vocab, seed);
  throw ArgumentError("unknown corpus kind '" + kind + "' (expected pattern, random-walk or uniform)");
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& c, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ArgumentError("split fraction must lie in (0, 1)");
  auto cut = static_cast<std::size_t>(double(c.tokens.size()) * fraction);
  Corpus a = c, b = c;
  a.tokens.assign(c.tokens.begin(), c.tokens.begin() + cut);
  b.tokens.assign(c.tokens.begin() + cut, c.tokens.end());
  return {std::move(a), std::move(b)};
}

TokenBatch sample_windows(const Corpus& c, std::size_t batch, std::size_t window, std::mt19937_64& rng) {
  if (c.tokens.size() < window) throw ArgumentError("corpus shorter than one window");
  std::uniform_int_distribution<std::size_t> start(0, c.tokens.size() - window);
  TokenBatch out(batch);
  for (auto& row : out) {
    auto s = start(rng);
    row.assign(c.tokens.begin() + s, c.tokens.begin() + s + window);
  }
  return out;
}

std::vector<TokenBatch> sequential_batches(const Corpus& c, std::size_t batch, std::size_t window) {
  std::vector<TokenBatch> out;
  TokenBatch cur;
  for (std::size_t s = 0; s + window <= c.tokens.size(); s += window) {
    cur.emplace_back(c.tokens.begin() + s, c.tokens.begin() + s + window);
    if (cur.size() == batch) out.push_back(std::move(cur)), cur.clear();
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace moepp
