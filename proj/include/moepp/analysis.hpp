#pragma once

// Routing diagnostics computed from trace records. Every function is a pure
// function of its input; CSV output uses fixed formatting so reruns are
// byte-identical.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "moepp/model.hpp"
#include "moepp/trace.hpp"

namespace moepp {

enum class GroupBy { Layer, Tag };

struct LoadTable {
  std::vector<std::string> groups;
  std::size_t experts = 0;
  std::vector<std::vector<double>> freq;  // per group: selections / tokens
  std::vector<std::size_t> tokens;        // per group
};

/// Streaming accumulator; feed records in any order.
class LoadAccumulator {
 public:
  LoadAccumulator(std::size_t experts, GroupBy by) : experts_(experts), by_(by) {}
  void add(const TokenRecord& r);
  LoadTable table() const;

 private:
  std::size_t experts_;
  GroupBy by_;
  std::map<std::string, std::vector<std::size_t>> counts_;
  std::map<std::string, std::size_t> tokens_;
};

/// Per-expert selection frequency per group (pre-drop selections). Rows sum
/// to K. Computed through LoadAccumulator.
LoadTable expert_load_distribution(const Trace& trace, GroupBy by);
/// Same table by a direct recount over the whole trace.
LoadTable expert_load_distribution_batch(const Trace& trace, GroupBy by);

/// Mean number of FFN experts selected per occurrence of each token id,
/// averaged over occurrences and layers.
std::map<std::size_t, double> ffn_activation_per_token(const Trace& trace);

struct ScoreStats {
  double mean = 0.0, var = 0.0, min = 0.0, max = 0.0;
};

struct RoutingScoreRow {
  std::size_t layer = 0;
  ScoreStats top1, top2;
};

/// Per-layer statistics of the highest and second-highest softmax scores.
std::vector<RoutingScoreRow> routing_score_stats(const Trace& trace);

struct ResidualComparison {
  std::vector<RoutingScoreRow> with_residual;
  std::vector<RoutingScoreRow> without_residual;
};

/// Runs both models on `probe` and reports routing-score statistics side
/// by side.
ResidualComparison residual_variance_study(const Model& with_residual, const Model& without_residual,
                                           const std::vector<TokenBatch>& probe);

std::string load_table_csv(const LoadTable& t, const LayerConfig& cfg);
std::string ffn_per_token_csv(const std::map<std::size_t, double>& m);
std::string routing_scores_csv(const std::vector<RoutingScoreRow>& rows, const std::string& label);

/// Grouped bar chart, one group of bars per row.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& series_labels, const std::vector<std::vector<double>>& values);

}  // namespace moepp
