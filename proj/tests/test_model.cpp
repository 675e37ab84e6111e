#include <doctest.h>

#include <cmath>

#include "moepp/autograd.hpp"
#include "moepp/corpus.hpp"
#include "moepp/model.hpp"
#include "moepp/ops.hpp"
#include "moepp/optim.hpp"
#include "moepp/train.hpp"

using namespace moepp;

namespace {
ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab = 11;
  c.hidden = 8;
  c.intermediate = 12;
  c.layers = 3;
  c.heads = 2;
  c.head_dim = 4;
  c.seq_len = 6;
  c.layer.n_ffn = 4;
  c.layer.n_zero = 1;
  c.layer.n_copy = 1;
  c.layer.n_const = 1;
  return c;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}
}  // namespace

TEST_CASE("model config validation") {
  auto c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.head_dim = 3;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_config();
  c.seq_len = 1;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("forward basics") {
  Model m(tiny_config(), 1);
  SUBCASE("single token") {
    auto out = m.forward({{3}});
    CHECK(out.logits.rows() == 1);
    CHECK(out.logits.cols() == 11);
    for (double v : out.logits.data()) CHECK(std::isfinite(v));
    CHECK(out.layers.size() == 3);
  }
  SUBCASE("id out of range") { CHECK_THROWS_AS(m.forward({{1, 11}}), ArgumentError); }
  SUBCASE("too long or ragged") {
    CHECK_THROWS_AS(m.forward({{1, 2, 3, 4, 5, 6, 7}}), ArgumentError);
    CHECK_THROWS_AS(m.forward({{1, 2}, {1}}), ArgumentError);
  }
  SUBCASE("same seed, same logits") {
    Model m2(tiny_config(), 1);
    TokenBatch b{{1, 2, 3, 4}, {5, 6, 7, 8}};
    CHECK(same_values(m.forward(b).logits, m2.forward(b).logits));
    Model m3(tiny_config(), 2);
    CHECK_FALSE(same_values(m.forward(b).logits, m3.forward(b).logits));
  }
}

TEST_CASE("causal masking") {
  for (double gamma : {1.1, 0.2}) {  // slack and heavy dropping
    auto cfg = tiny_config();
    cfg.layer.gamma = gamma;
    Model m(cfg, 7);
    std::vector<std::size_t> seq{1, 4, 2, 9, 0, 3};
    auto base = m.forward({seq}).logits;
    for (std::size_t v = 0; v < cfg.vocab; ++v) {
      auto probe = seq;
      probe.back() = v;
      auto out = m.forward({probe}).logits;
      for (std::size_t t = 0; t + 1 < seq.size(); ++t)
        for (std::size_t c = 0; c < cfg.vocab; ++c) CHECK(out.at(t, c) == base.at(t, c));
    }
  }
}

TEST_CASE("gating residual chain") {
  auto cfg = tiny_config();
  Model with(cfg, 3);
  with.forward({{1, 2, 3}});
  std::vector<std::pair<std::size_t, std::size_t>> want{{0, 1}, {1, 2}};
  CHECK(with.residual_links() == want);

  std::size_t wg = 0;
  for (auto& [name, t] : with.named_parameters())
    if (name.find("router.w_g") != std::string::npos) ++wg;
  CHECK(wg == cfg.layers - 1);

  cfg.layer.residuals_enabled = false;
  Model without(cfg, 3);
  without.forward({{1, 2, 3}});
  CHECK(without.residual_links().empty());
  for (auto& [name, t] : without.named_parameters()) CHECK(name.find("router.w_g") == std::string::npos);
}

TEST_CASE("residual gradient reaches the previous router") {
  // The layer-1 routing logits depend on layer-0 router logits only through
  // W_g; with the chain detached, the direct contribution disappears.
  auto cfg = tiny_config();
  Model m(cfg, 5);
  REQUIRE(m.named_parameters()[8].first == "layers.0.router.w");
  auto grad_of = [&](bool detach) {
    auto c = cfg;
    c.layer.detach_residual = detach;
    Model mm(c, 5);
    Tape tape;
    TapeScope scope(tape);
    auto out = mm.forward({{1, 2, 3, 4}});
    auto w = mm.named_parameters()[8].second;
    tape.backward(sum(out.layers[1].routing.logits));
    std::vector<double> g(w.grad().begin(), w.grad().end());
    return g;
  };
  auto g_on = grad_of(false);
  auto g_off = grad_of(true);
  double diff = 0.0;
  for (std::size_t i = 0; i < g_on.size(); ++i) diff += std::abs(g_on[i] - g_off[i]);
  CHECK(diff > 1e-9);
}

TEST_CASE("parameter count matches the closed form") {
  for (bool residual : {true, false}) {
    auto cfg = tiny_config();
    cfg.layer.residuals_enabled = residual;
    Model m(cfg, 1);
    auto r = parameter_report(cfg);
    CHECK(m.parameter_count() == r.total());
    // Hand count for the tiny shape.
    const std::size_t d = 8, n = 7, l = 3;
    std::size_t ffn = 2 * d * 12 + 12 + d;
    std::size_t hand = (11 + 6) * d + l * 4 * d * d + (2 * l + 1) * d + l * n * d + (residual ? (l - 1) * n * n : 0) +
                       l * (4 * ffn + 3 * d) + 11 * d;
    CHECK(r.total() == hand);
    CHECK(r.ffn_experts == l * 4 * ffn);
    CHECK(r.zc_experts == l * 3 * d);
  }
  ModelConfig scaled;  // 8 FFN + 1/1/2, D 64, D_int 172, L 4
  Model big(scaled, 1);
  CHECK(big.parameter_count() == parameter_report(scaled).total());
}

TEST_CASE("learning-rate schedule") {
  AdamWConfig c;
  c.lr = 1.0;
  c.warmup_steps = 10;
  c.total_steps = 110;
  c.final_lr_ratio = 0.1;
  CHECK(learning_rate(c, 0) == doctest::Approx(0.1));
  CHECK(learning_rate(c, 9) == doctest::Approx(1.0));
  CHECK(learning_rate(c, 10) == doctest::Approx(1.0));
  CHECK(learning_rate(c, 60) == doctest::Approx(0.55));
  CHECK(learning_rate(c, 110) == doctest::Approx(0.1));
  CHECK(learning_rate(c, 500) == doctest::Approx(0.1));
  for (std::size_t s = 10; s < 110; ++s) CHECK(learning_rate(c, s + 1) <= learning_rate(c, s));
}

TEST_CASE("AdamW update") {
  SUBCASE("first step by hand") {
    Tensor w = Tensor::matrix({{1.0, -2.0}}, true);
    Tensor b = Tensor::vector({0.5}, true);
    AdamWConfig c;
    c.lr = 0.1;
    c.warmup_steps = 0;
    c.total_steps = 1000;
    c.clip_norm = 0.0;
    AdamW opt({w, b}, c);
    w.mutable_grad()[0] = 0.3;
    w.mutable_grad()[1] = -0.4;
    b.mutable_grad()[0] = 2.0;
    double norm = opt.step();
    CHECK(norm == doctest::Approx(std::sqrt(0.09 + 0.16 + 4.0)));
    const double lr = learning_rate(c, 0);
    // Bias-corrected first step moves by lr * g / (|g| + eps).
    CHECK(w.at(0) == doctest::Approx(1.0 - lr * 0.1 * 1.0 - lr * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
    CHECK(w.at(1) == doctest::Approx(-2.0 - lr * 0.1 * -2.0 + lr * 0.4 / (0.4 + 1e-8)).epsilon(1e-12));
    // Vectors are not decayed.
    CHECK(b.at(0) == doctest::Approx(0.5 - lr * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("clipping scales the gradient") {
    Tensor w = Tensor::vector({0.0, 0.0}, true);
    AdamWConfig c;
    c.clip_norm = 1.0;
    AdamW opt({w}, c);
    w.mutable_grad()[0] = 30.0;
    w.mutable_grad()[1] = 40.0;
    CHECK(opt.step() == doctest::Approx(50.0));
    CHECK(opt.first_moments()[0][0] == doctest::Approx(0.1 * 0.6));
    CHECK(opt.first_moments()[0][1] == doctest::Approx(0.1 * 0.8));
  }
  SUBCASE("non-finite gradient") {
    Tensor w = Tensor::vector({0.0}, true);
    AdamW opt({w}, AdamWConfig{});
    w.mutable_grad()[0] = std::nan("");
    CHECK_THROWS_AS(opt.step(), NumericalError);
  }
}

TEST_CASE("corpora") {
  auto p = repeated_pattern_corpus(200, 16, 1);
  CHECK(p.tokens.size() == 200);
  for (std::size_t i = 64; i < 200; ++i) CHECK(p.tokens[i] == p.tokens[i - 64]);
  auto w = random_walk_corpus(500, 10, 2);
  for (std::size_t i = 1; i < w.tokens.size(); ++i) {
    auto d = (w.tokens[i] + 10 - w.tokens[i - 1]) % 10;
    CHECK((d == 0 || d == 1 || d == 9));
  }
  auto u = uniform_corpus(1000, 7, 3);
  for (auto t : u.tokens) CHECK(t < 7);
  CHECK_THROWS_AS(text_file_corpus("/nonexistent/corpus.txt"), ArgumentError);
  CHECK_THROWS_AS(synthetic_corpus("zipf", 10, 4, 0), ArgumentError);
  auto [a, b] = split_corpus(u, 0.9);
  CHECK(a.tokens.size() == 900);
  CHECK(b.tokens.size() == 100);
  std::mt19937_64 rng(1);
  auto windows = sample_windows(u, 4, 9, rng);
  CHECK(windows.size() == 4);
  for (auto& row : windows) CHECK(row.size() == 9);
}

TEST_CASE("perplexity") {
  auto cfg = tiny_config();
  cfg.vocab = 16;
  Model m(cfg, 9);
  auto u = uniform_corpus(2000, 16, 4);
  double ppl = evaluate_perplexity(m, u, 8);
  CHECK(std::abs(ppl - 16.0) / 16.0 < 0.1);
  CHECK(evaluate_perplexity(m, u, 8) == ppl);
}

TEST_CASE("training") {
  SUBCASE("pattern corpus is memorised") {
    auto cfg = tiny_config();
    cfg.vocab = 8;
    cfg.hidden = 16;
    cfg.head_dim = 8;
    cfg.seq_len = 8;
    Model m(cfg, 2);
    auto corpus = repeated_pattern_corpus(600, 8, 5, 12);
    TrainConfig tc;
    tc.steps = 150;
    tc.batch = 8;
    tc.optim.lr = 1e-2;
    tc.optim.total_steps = 150;
    Trainer tr(m, tc);
    auto metrics = tr.run(corpus);
    REQUIRE(metrics.size() == 150);
    CHECK(metrics.back().ce < 0.5 * metrics.front().ce);
    CHECK(evaluate_perplexity(m, corpus) < 1.5);
    for (const auto& s : metrics) {
      CHECK(s.f.size() == cfg.layers);
      CHECK(s.drop_rate >= 0.0);
      CHECK(s.drop_rate <= 1.0);
    }
  }
  SUBCASE("vanilla configuration trains") {
    auto cfg = tiny_config();
    cfg.layer = LayerConfig::vanilla(4, 2);
    Model m(cfg, 3);
    TrainConfig tc;
    tc.steps = 10;
    tc.batch = 4;
    Trainer tr(m, tc);
    auto metrics = tr.run(random_walk_corpus(300, 11, 1));
    CHECK(metrics.size() == 10);
  }
  SUBCASE("divergence is reported with the step") {
    auto cfg = tiny_config();
    Model m(cfg, 3);
    TrainConfig tc;
    tc.steps = 3;
    tc.batch = 2;
    Trainer tr(m, tc);
    auto params = m.named_parameters();
    params.back().second.mutable_data()[0] = std::nan("");
    try {
      tr.run(uniform_corpus(100, 11, 1));
      FAIL("expected divergence");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
  }
  SUBCASE("same seed, same metrics") {
    auto run = [] {
      Model m(tiny_config(), 4);
      TrainConfig tc;
      tc.steps = 5;
      tc.batch = 3;
      tc.seed = 11;
      Trainer tr(m, tc);
      std::string lines;
      tr.run(uniform_corpus(300, 11, 2), [&](const StepMetrics& s) { lines += metrics_json_line(s) + "\n"; });
      return lines;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("ffn load ratio") {
  CHECK(ffn_load_ratio({0.2, 0.4, 0.1, 9.0}, 3) == doctest::Approx(4.0));
  CHECK(std::isinf(ffn_load_ratio({0.0, 0.4}, 2)));
  CHECK_THROWS_AS(ffn_load_ratio({0.1}, 2), ArgumentError);
}
