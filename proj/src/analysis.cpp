#include "moepp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace moepp {

namespace {

using GroupKey = std::pair<std::size_t, std::string>;

GroupKey key_of(const TokenRecord& r, GroupBy by) {
  return by == GroupBy::Layer ? GroupKey{r.layer, ""} : GroupKey{0, r.tag};
}

std::string label_of(const GroupKey& k, GroupBy by) {
  return by == GroupBy::Layer ? "layer" + std::to_string(k.first) : k.second;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

ScoreStats stats_of(const std::vector<double>& v) {
  ScoreStats s;
  if (v.empty()) return s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  for (double x : v) s.mean += x;
  s.mean /= double(v.size());
  for (double x : v) s.var += (x - s.mean) * (x - s.mean);
  s.var /= double(v.size());
  return s;
}

void check_selected(const TokenRecord& r, std::size_t experts) {
  for (auto e : r.selected)
    if (e >= experts) throw ArgumentError("trace record selects expert " + std::to_string(e) + " >= N");
}

}  // namespace

void LoadAccumulator::add(const TokenRecord& r) {
  check_selected(r, experts_);
  auto k = key_of(r, by_);
  std::string key = std::to_string(k.first);
  key.insert(0, 20 - key.size(), '0');  // numeric order for layer keys
  key += '\x1f' + k.second;
  auto& c = counts_[key];
  if (c.empty()) c.assign(experts_, 0);
  for (auto e : r.selected) ++c[e];
  ++tokens_[key];
}

LoadTable LoadAccumulator::table() const {
  LoadTable t;
  t.experts = experts_;
  for (const auto& [key, c] : counts_) {
    auto sep = key.find('\x1f');
    GroupKey k{std::stoull(key.substr(0, sep)), key.substr(sep + 1)};
    t.groups.push_back(label_of(k, by_));
    const auto n = tokens_.at(key);
    t.tokens.push_back(n);
    std::vector<double> f(experts_);
    for (std::size_t e = 0; e < experts_; ++e) f[e] = double(c[e]) / double(n);
    t.freq.push_back(std::move(f));
  }
  return t;
}

LoadTable expert_load_distribution(const Trace& trace, GroupBy by) {
  if (trace.tokens.empty()) throw ArgumentError("expert_load_distribution: empty trace");
  LoadAccumulator acc(trace.header.layer.n_experts(), by);
  for (const auto& r : trace.tokens) acc.add(r);
  return acc.table();
}

LoadTable expert_load_distribution_batch(const Trace& trace, GroupBy by) {
  if (trace.tokens.empty()) throw ArgumentError("expert_load_distribution: empty trace");
  const std::size_t n = trace.header.layer.n_experts();
  std::set<GroupKey> keys;
  for (const auto& r : trace.tokens) {
    check_selected(r, n);
    keys.insert(key_of(r, by));
  }
  LoadTable t;
  t.experts = n;
  for (const auto& k : keys) {
    std::size_t tokens = 0;
    std::vector<std::size_t> hits(n, 0);
    for (const auto& r : trace.tokens) {
      if (key_of(r, by) != k) continue;
      ++tokens;
      for (std::size_t e = 0; e < n; ++e) hits[e] += std::count(r.selected.begin(), r.selected.end(), e);
    }
    t.groups.push_back(label_of(k, by));
    t.tokens.push_back(tokens);
    std::vector<double> f(n);
    for (std::size_t e = 0; e < n; ++e) f[e] = double(hits[e]) / double(tokens);
    t.freq.push_back(std::move(f));
  }
  return t;
}

std::map<std::size_t, double> ffn_activation_per_token(const Trace& trace) {
  const std::size_t n_ffn = trace.header.layer.n_ffn;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> acc;  // id -> (ffn hits, occurrences)
  for (const auto& r : trace.tokens) {
    auto& a = acc[r.token_id];
    a.first += std::count_if(r.selected.begin(), r.selected.end(), [&](std::size_t e) { return e < n_ffn; });
    ++a.second;
  }
  std::map<std::size_t, double> out;
  for (const auto& [id, a] : acc) out[id] = double(a.first) / double(a.second);
  return out;
}

std::vector<RoutingScoreRow> routing_score_stats(const Trace& trace) {
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> per_layer;
  for (const auto& r : trace.tokens) {
    per_layer[r.layer].first.push_back(r.top1);
    per_layer[r.layer].second.push_back(r.top2);
  }
  std::vector<RoutingScoreRow> rows;
  for (const auto& [layer, v] : per_layer) rows.push_back({layer, stats_of(v.first), stats_of(v.second)});
  return rows;
}

ResidualComparison residual_variance_study(const Model& with_residual, const Model& without_residual,
                                           const std::vector<TokenBatch>& probe) {
  return {routing_score_stats(capture_trace(with_residual, probe, "probe")),
          routing_score_stats(capture_trace(without_residual, probe, "probe"))};
}

std::string load_table_csv(const LoadTable& t, const LayerConfig& cfg) {
  std::ostringstream out;
  out << "group,tokens";
  for (std::size_t e = 0; e < t.experts; ++e) out << ',' << to_string(cfg.kind_of(e)) << e;
  out << '\n';
  for (std::size_t g = 0; g < t.groups.size(); ++g) {
    out << t.groups[g] << ',' << t.tokens[g];
    for (double f : t.freq[g]) out << ',' << fmt(f);
    out << '\n';
  }
  return out.str();
}

std::string ffn_per_token_csv(const std::map<std::size_t, double>& m) {
  std::ostringstream out;
  out << "token_id,mean_ffn_experts\n";
  for (const auto& [id, v] : m) out << id << ',' << fmt(v) << '\n';
  return out.str();
}

std::string routing_scores_csv(const std::vector<RoutingScoreRow>& rows, const std::string& label) {
  std::ostringstream out;
  out << "model,layer,top1_mean,top1_var,top1_min,top1_max,top2_mean,top2_var,top2_min,top2_max\n";
  for (const auto& r : rows) {
    out << label << ',' << r.layer;
    for (const auto* s : {&r.top1, &r.top2}) out << ',' << fmt(s->mean) << ',' << fmt(s->var) << ',' << fmt(s->min) << ',' << fmt(s->max);
    out << '\n';
  }
  return out.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& series_labels, const std::vector<std::vector<double>>& values) {
  const double width = 760, height = 360, left = 60, bottom = 40, top = 40;
  double vmax = 0.0;
  for (const auto& row : values)
    for (double v : row) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  const std::size_t rows = values.size();
  const std::size_t series = rows ? values[0].size() : 0;
  const double plot_w = width - left - 20, plot_h = height - top - bottom;
  const double group_w = rows ? plot_w / double(rows) : plot_w;
  const double bar_w = series ? group_w * 0.8 / double(series) : 0.0;
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
                                  "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << left - 5 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(vmax)
      << "</text>\n";
  for (std::size_t r = 0; r < rows; ++r) {
    const double gx = left + group_w * double(r) + group_w * 0.1;
    for (std::size_t s = 0; s < values[r].size(); ++s) {
      const double h = values[r][s] / vmax * plot_h;
      out << "<rect x=\"" << fmt(gx + bar_w * double(s)) << "\" y=\"" << fmt(top + plot_h - h) << "\" width=\""
          << fmt(bar_w) << "\" height=\"" << fmt(h) << "\" fill=\"" << palette[s % 10] << "\"><title>"
          << (s < series_labels.size() ? series_labels[s] : "") << ' ' << fmt(values[r][s]) << "</title></rect>\n";
    }
    if (r < row_labels.size()) {
      out << "<text x=\"" << fmt(gx + group_w * 0.4) << "\" y=\"" << height - bottom + 15
          << "\" text-anchor=\"middle\" font-size=\"10\">" << row_labels[r] << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace moepp
