#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "moepp/moe_layer.hpp"
#include "moepp/tensor.hpp"

namespace moepp {

struct ModelConfig {
  std::size_t vocab = 32;
  std::size_t hidden = 64;
  std::size_t intermediate = 172;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t seq_len = 32;
  LayerConfig layer;

  /// heads * head_dim must equal hidden; seq_len >= 2.
  void validate() const;
};

/// Closed-form parameter count for `cfg`, per group.
struct ParameterReport {
  std::size_t embedding = 0;  // token + position tables
  std::size_t attention = 0;  // q, k, v, o projections over all layers
  std::size_t norms = 0;
  std::size_t routers = 0;  // W and W_g over all layers
  std::size_t ffn_experts = 0;
  std::size_t zc_experts = 0;
  std::size_t head = 0;

  std::size_t total() const { return embedding + attention + norms + routers + ffn_experts + zc_experts + head; }
};

ParameterReport parameter_report(const ModelConfig& cfg);

using TokenBatch = std::vector<std::vector<std::size_t>>;

struct ForwardResult {
  Tensor logits;  // (B*S) x vocab, sequence-major
  std::vector<LayerOutput> layers;
  /// Load-balance loss averaged over layers (scalar).
  Tensor lb;
};

/// Decoder-only transformer: token + learned position embeddings, pre-norm
/// causal attention blocks whose FFN is an MoE++ layer, final norm, untied
/// output head. Router logits of layer j feed layer j+1 when residuals are
/// enabled.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  /// All sequences in a batch must share one length in [1, seq_len].
  ForwardResult forward(const TokenBatch& batch) const;

  /// Stable names, stable order. Used by the optimizer and checkpoints.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// Router logits handed from layer j to layer j+1 during the last
  /// forward(), recorded as (from, to) pairs.
  const std::vector<std::pair<std::size_t, std::size_t>>& residual_links() const { return links_; }

 private:
  struct Block {
    Tensor norm1, wq, wk, wv, wo, norm2;
    LayerParams moe;
  };

  Tensor attention(const Tensor& h, const Block& b, std::size_t batch, std::size_t seq) const;

  ModelConfig cfg_;
  Tensor tok_emb_, pos_emb_, norm_f_, head_;
  std::vector<Block> blocks_;
  mutable std::vector<std::pair<std::size_t, std::size_t>> links_;
};

/// Next-token targets: inputs are tokens[0..S-1] of each row, targets are
/// tokens[1..S].
std::pair<TokenBatch, std::vector<std::size_t>> split_inputs_targets(const TokenBatch& windows);

}  // namespace moepp
