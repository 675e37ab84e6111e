// moepp: train, evaluate, trace, simulate and analyze MoE++ models.
//
// Exit codes: 0 success, 2 user error (bad config, arguments or inputs),
// 3 numerical failure (NaN/Inf during training), 1 anything else.

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "moepp/analysis.hpp"
#include "moepp/checkpoint.hpp"
#include "moepp/config.hpp"
#include "moepp/run.hpp"
#include "moepp/sim.hpp"
#include "moepp/trace.hpp"

namespace fs = std::filesystem;
using namespace moepp;

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 2;
constexpr int kNumericalError = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string trace;
  std::string analysis;
  std::string checkpoint;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? default_run_config() : load_run_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (!o.out.empty()) cfg.io.output_dir = o.out;
  return cfg;
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir(cfg.io.output_dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int cmd_train(const Options& o) {
  RunConfig cfg = resolve(o);
  fs::path dir = out_dir(cfg);
  write_file(dir / "config.json", to_json(cfg).dump(2) + "\n");
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  auto run = train_run(cfg, [&](const StepMetrics& m) { metrics << metrics_json_line(m) << '\n'; });
  metrics.close();
  save_checkpoint((dir / "checkpoint.bin").string(), *run.model, run.trainer.get());
  auto trace = capture_trace(*run.model, heldout_batches(cfg, run.heldout, cfg.io.trace_batches), run.heldout.tag);
  const fs::path trace_path = o.trace.empty() ? dir / "trace.jsonl" : fs::path(o.trace);
  write_trace(trace_path.string(), trace);
  const auto& first = run.metrics.front();
  const auto& last = run.metrics.back();
  std::cout << "steps " << run.metrics.size() << "  ce " << first.ce << " -> " << last.ce << "  drop_rate "
            << last.drop_rate << "\n";
  std::cout << "wrote " << (dir / "metrics.jsonl").string() << ", " << (dir / "checkpoint.bin").string() << ", "
            << trace_path.string() << "\n";
  return kOk;
}

int cmd_eval(const Options& o) {
  RunConfig cfg = resolve(o);
  const std::string ckpt_path = o.checkpoint.empty() ? (fs::path(cfg.io.output_dir) / "checkpoint.bin").string() : o.checkpoint;
  auto ckpt = read_checkpoint(ckpt_path);
  Model model = model_from_checkpoint(ckpt);
  auto [train, heldout] = make_corpora(cfg);
  double ppl = evaluate_perplexity(model, heldout, cfg.train.batch);
  std::cout << nlohmann::json{{"checkpoint", ckpt_path}, {"step", ckpt.step}, {"heldout_tokens", heldout.tokens.size()},
                              {"perplexity", ppl}}
                   .dump()
            << "\n";
  return kOk;
}

void require_match(const LayerConfig& a, const LayerConfig& b) {
  if (a.n_ffn != b.n_ffn || a.n_zc() != b.n_zc() || a.k != b.k) {
    throw ArgumentError("trace was recorded with " + std::to_string(b.n_ffn) + "+" + std::to_string(b.n_zc()) +
                        " experts, K=" + std::to_string(b.k) + "; config has " + std::to_string(a.n_ffn) + "+" +
                        std::to_string(a.n_zc()) + ", K=" + std::to_string(a.k));
  }
}

int cmd_simulate(const Options& o) {
  RunConfig cfg = resolve(o);
  fs::path dir = out_dir(cfg);
  const std::string trace_path = o.trace.empty() ? (dir / "trace.jsonl").string() : o.trace;
  auto trace = read_trace(trace_path);
  require_match(cfg.model.layer, trace.header.layer);
  if (trace.header.hidden != cfg.model.hidden || trace.header.intermediate != cfg.model.intermediate) {
    throw ArgumentError("trace hidden/intermediate sizes do not match the config");
  }
  CostModel cost{cfg.model.hidden, cfg.model.intermediate, 8};
  auto placement = make_placement(cfg.model.layer, cfg.sim.devices);
  auto report = simulate(plans_from_trace(trace), cfg.model.layer, placement, cost);
  const std::string text = report_text(report, cfg.model.layer, placement, cost);
  write_file(dir / "cost_report.txt", text);
  write_file(dir / "tau_sweep.csv", sweep_csv(tau_sweep(cfg.model.layer, cfg.sim.tau_sweep)));
  std::cout << text;
  return kOk;
}

int cmd_sweep(const Options& o) {
  RunConfig cfg = resolve(o);
  fs::path dir = out_dir(cfg);
  const std::string csv = sweep_csv(tau_sweep(cfg.model.layer, cfg.sim.tau_sweep));
  write_file(dir / "tau_sweep.csv", csv);
  std::cout << csv;
  return kOk;
}

const std::vector<std::string> kAnalyses{"expert-load", "expert-load-tag", "ffn-per-token", "routing-scores"};

int cmd_analyze(const Options& o) {
  if (std::find(kAnalyses.begin(), kAnalyses.end(), o.analysis) == kAnalyses.end()) {
    std::string names;
    for (const auto& n : kAnalyses) names += (names.empty() ? "" : ", ") + n;
    throw ArgumentError("unknown analysis '" + o.analysis + "'; valid names: " + names);
  }
  if (o.trace.empty()) throw ArgumentError("--trace is required for analyze");
  auto trace = read_trace(o.trace);
  fs::path dir(o.out.empty() ? "." : o.out);
  fs::create_directories(dir);
  const auto& layer = trace.header.layer;
  if (o.analysis == "expert-load" || o.analysis == "expert-load-tag") {
    auto table = expert_load_distribution(trace, o.analysis == "expert-load" ? GroupBy::Layer : GroupBy::Tag);
    std::vector<std::string> series;
    for (std::size_t e = 0; e < table.experts; ++e) series.push_back(std::string(to_string(layer.kind_of(e))) + std::to_string(e));
    write_file(dir / (o.analysis + ".csv"), load_table_csv(table, layer));
    write_file(dir / (o.analysis + ".svg"), bar_chart_svg("Expert load", table.groups, series, table.freq));
  } else if (o.analysis == "ffn-per-token") {
    auto m = ffn_activation_per_token(trace);
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
    for (const auto& [id, v] : m) {
      labels.push_back(std::to_string(id));
      values.push_back({v});
    }
    write_file(dir / "ffn-per-token.csv", ffn_per_token_csv(m));
    write_file(dir / "ffn-per-token.svg", bar_chart_svg("FFN experts per token", labels, {"mean"}, values));
  } else {
    auto rows = routing_score_stats(trace);
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
    for (const auto& r : rows) {
      labels.push_back("layer" + std::to_string(r.layer));
      values.push_back({r.top1.mean, r.top2.mean});
    }
    write_file(dir / "routing-scores.csv", routing_scores_csv(rows, "trace"));
    write_file(dir / "routing-scores.svg", bar_chart_svg("Top-1 / top-2 routing scores", labels, {"top1", "top2"}, values));
  }
  std::cout << "wrote " << (dir / o.analysis).string() << ".csv\n";
  return kOk;
}

int cmd_config_check(const Options& o) {
  RunConfig cfg = resolve(o);
  std::cout << to_json(cfg).dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoE++ reference implementation: train, trace, simulate, analyze"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "JSON run configuration");
    if (needs_config) c->required();
    sub->add_option("--seed", o.seed, "Override train.seed");
    sub->add_option("--out", o.out, "Override io.output_dir");
  };

  auto* train = app.add_subcommand("train", "Train a model; writes metrics, checkpoint and trace");
  add_common(train, true);
  train->add_option("--trace", o.trace, "Trace output path (default <out>/trace.jsonl)");

  auto* eval = app.add_subcommand("eval", "Held-out perplexity of a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint path (default <out>/checkpoint.bin)");

  auto* simulate = app.add_subcommand("simulate", "Cost report from a routing trace");
  add_common(simulate, true);
  simulate->add_option("--trace", o.trace, "Trace path (default <out>/trace.jsonl)");

  auto* analyze = app.add_subcommand("analyze", "Routing analyses from a trace (CSV + SVG)");
  analyze->add_option("--trace", o.trace, "Trace path")->required();
  analyze->add_option("--analysis", o.analysis, "expert-load | expert-load-tag | ffn-per-token | routing-scores")
      ->required();
  analyze->add_option("--out", o.out, "Output directory (default .)");

  auto* sweep = app.add_subcommand("sweep-tau", "Complexity ratio and predicted speedup over sim.tau_sweep");
  add_common(sweep, false);

  auto* check = app.add_subcommand("config-check", "Validate a config and print it with defaults filled in");
  add_common(check, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*simulate) return cmd_simulate(o);
    if (*analyze) return cmd_analyze(o);
    if (*sweep) return cmd_sweep(o);
    if (*check) return cmd_config_check(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUserError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
  return kUserError;
}
