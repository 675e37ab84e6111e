#include "moepp/model.hpp"

#include <cmath>

#include "moepp/ops.hpp"

namespace moepp {

void ModelConfig::validate() const {
  if (vocab < 2) throw ArgumentError("vocab must be >= 2");
  if (hidden == 0 || intermediate == 0 || layers == 0) throw ArgumentError("hidden, intermediate, layers must be > 0");
  if (heads == 0 || heads * head_dim != hidden) {
    throw ArgumentError("heads*head_dim (" + std::to_string(heads * head_dim) + ") must equal hidden (" +
                        std::to_string(hidden) + ")");
  }
  if (seq_len < 2) throw ArgumentError("seq_len must be >= 2");
  layer.validate();
}

ParameterReport parameter_report(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.hidden, n = cfg.layer.n_experts();
  ParameterReport r;
  r.embedding = (cfg.vocab + cfg.seq_len) * d;
  r.attention = cfg.layers * 4 * d * d;
  r.norms = (2 * cfg.layers + 1) * d;
  r.routers = cfg.layers * n * d;
  if (cfg.layer.residuals_enabled) r.routers += (cfg.layers - 1) * n * n;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = cfg.layers * moepp::parameter_count({cfg.layer.kind_of(i), d, cfg.intermediate});
    (i < cfg.layer.n_ffn ? r.ffn_experts : r.zc_experts) += c;
  }
  r.head = cfg.vocab * d;
  return r;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.hidden;
  const double proj_std = 0.02 / std::sqrt(2.0 * double(cfg_.layers));
  tok_emb_ = normal_tensor({cfg_.vocab, d}, 0.02, rng);
  pos_emb_ = normal_tensor({cfg_.seq_len, d}, 0.02, rng);
  for (std::size_t j = 0; j < cfg_.layers; ++j) {
    Block b;
    b.norm1 = Tensor::full({d}, 1.0, true);
    b.wq = normal_tensor({d, d}, 0.02, rng);
    b.wk = normal_tensor({d, d}, 0.02, rng);
    b.wv = normal_tensor({d, d}, 0.02, rng);
    b.wo = normal_tensor({d, d}, proj_std, rng);
    b.norm2 = Tensor::full({d}, 1.0, true);
    b.moe = make_layer_params(cfg_.layer, d, cfg_.intermediate, cfg_.layer.residuals_enabled && j > 0, rng);
    blocks_.push_back(std::move(b));
  }
  norm_f_ = Tensor::full({d}, 1.0, true);
  head_ = normal_tensor({cfg_.vocab, d}, 0.02, rng);
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out{{"tok_emb", tok_emb_}, {"pos_emb", pos_emb_}};
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    const auto& b = blocks_[j];
    const std::string p = "layers." + std::to_string(j) + ".";
    out.insert(out.end(), {{p + "norm1", b.norm1}, {p + "attn.wq", b.wq}, {p + "attn.wk", b.wk},
                           {p + "attn.wv", b.wv}, {p + "attn.wo", b.wo}, {p + "norm2", b.norm2},
                           {p + "router.w", b.moe.router.w}});
    if (b.moe.router.w_g) out.emplace_back(p + "router.w_g", *b.moe.router.w_g);
    for (std::size_t i = 0; i < b.moe.experts.size(); ++i) {
      for (auto& [name, t] : b.moe.experts[i].named_parameters()) {
        out.emplace_back(p + "experts." + std::to_string(i) + "." + name, t);
      }
    }
  }
  out.emplace_back("norm_f", norm_f_);
  out.emplace_back("head", head_);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

Tensor Model::attention(const Tensor& h, const Block& b, std::size_t batch, std::size_t seq) const {
  const std::size_t hd = cfg_.head_dim;
  Tensor q = matmul(h, transpose(b.wq));
  Tensor k = matmul(h, transpose(b.wk));
  Tensor v = matmul(h, transpose(b.wv));

  std::vector<double> mask(seq * seq, 0.0);
  for (std::size_t r = 0; r < seq; ++r)
    for (std::size_t c = r + 1; c < seq; ++c) mask[r * seq + c] = -1e30;
  Tensor causal({seq, seq}, std::move(mask));
  const double inv_sqrt = 1.0 / std::sqrt(double(hd));

  std::vector<Tensor> seqs;
  for (std::size_t s = 0; s < batch; ++s) {
    Tensor qs = slice_rows(q, s * seq, (s + 1) * seq);
    Tensor ks = slice_rows(k, s * seq, (s + 1) * seq);
    Tensor vs = slice_rows(v, s * seq, (s + 1) * seq);
    std::vector<Tensor> heads;
    for (std::size_t hh = 0; hh < cfg_.heads; ++hh) {
      Tensor qh = slice_cols(qs, hh * hd, (hh + 1) * hd);
      Tensor kh = slice_cols(ks, hh * hd, (hh + 1) * hd);
      Tensor vh = slice_cols(vs, hh * hd, (hh + 1) * hd);
      Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt), causal);
      heads.push_back(matmul(softmax(scores, 1), vh));
    }
    seqs.push_back(concat_cols(heads));
  }
  return matmul(concat_rows(seqs), transpose(b.wo));
}

ForwardResult Model::forward(const TokenBatch& batch) const {
  if (batch.empty()) throw ArgumentError("forward: empty batch");
  const std::size_t seq = batch.front().size();
  if (seq == 0 || seq > cfg_.seq_len) throw ArgumentError("forward: sequence length must lie in [1, seq_len]");
  std::vector<std::size_t> ids, positions;
  for (const auto& row : batch) {
    if (row.size() != seq) throw ArgumentError("forward: ragged batch");
    for (std::size_t t = 0; t < seq; ++t) {
      if (row[t] >= cfg_.vocab) {
        throw ArgumentError("forward: token id " + std::to_string(row[t]) + " >= vocab " + std::to_string(cfg_.vocab));
      }
      ids.push_back(row[t]);
      positions.push_back(t);
    }
  }

  Tensor h = add(gather_rows(tok_emb_, ids), gather_rows(pos_emb_, positions));
  ForwardResult out;
  links_.clear();
  std::optional<Tensor> prev;
  Tensor lb_sum;
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    const Block& b = blocks_[j];
    h = add(h, attention(rms_norm(h, b.norm1), b, batch.size(), seq));
    auto layer = layer_forward(rms_norm(h, b.norm2), prev, cfg_.layer, b.moe);
    h = add(h, layer.y);
    Tensor lb = load_balance_loss(layer.stats, cfg_.layer);
    lb_sum = j == 0 ? lb : add(lb_sum, lb);
    if (cfg_.layer.residuals_enabled) {
      if (prev) links_.emplace_back(j - 1, j);
      prev = layer.routing.logits;
    }
    out.layers.push_back(std::move(layer));
  }
  out.logits = matmul(rms_norm(h, norm_f_), transpose(head_));
  out.lb = scale(lb_sum, 1.0 / double(blocks_.size()));
  return out;
}

std::pair<TokenBatch, std::vector<std::size_t>> split_inputs_targets(const TokenBatch& windows) {
  TokenBatch inputs;
  std::vector<std::size_t> targets;
  for (const auto& w : windows) {
    if (w.size() < 2) throw ArgumentError("window needs at least two tokens");
    inputs.emplace_back(w.begin(), w.end() - 1);
    targets.insert(targets.end(), w.begin() + 1, w.end());
  }
  return {std::move(inputs), std::move(targets)};
}

}  // namespace moepp
