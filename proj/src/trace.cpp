#include "moepp/trace.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <map>

#include "moepp/config.hpp"

namespace moepp {

using nlohmann::json;

TraceHeader trace_header(const ModelConfig& cfg) {
  return {cfg.layer, cfg.layers, cfg.hidden, cfg.intermediate, cfg.vocab};
}

void append_forward(Trace& trace, const ForwardResult& fwd, const TokenBatch& inputs, std::size_t batch,
                    const std::string& tag) {
  std::vector<std::size_t> ids;
  for (const auto& row : inputs) ids.insert(ids.end(), row.begin(), row.end());
  for (std::size_t j = 0; j < fwd.layers.size(); ++j) {
    const auto& layer = fwd.layers[j];
    const auto& plan = layer.plan;
    if (plan.tokens() != ids.size()) throw DimensionError("append_forward: batch does not match forward result");
    PlanRecord pr{batch, j, plan.tokens(), plan.capacity, {}, plan.dropped_pairs()};
    for (const auto& a : plan.assigned) pr.assigned.push_back(a.size());
    trace.plans.push_back(std::move(pr));

    const std::size_t n = layer.routing.logits.cols();
    for (std::size_t t = 0; t < ids.size(); ++t) {
      TokenRecord r;
      r.batch = batch;
      r.layer = j;
      r.pos = t;
      r.token_id = ids[t];
      r.tag = tag;
      r.selected = layer.routing.selected[t];
      for (auto e : r.selected) r.gates.push_back(layer.routing.gates.at(t, e));
      for (const auto& p : plan.dropped[t]) r.dropped.push_back(p.expert);
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += layer.routing.logits.at(t, i);
      mean /= double(n);
      for (std::size_t i = 0; i < n; ++i) {
        double d = layer.routing.logits.at(t, i) - mean;
        var += d * d;
      }
      r.logit_mean = mean;
      r.logit_var = var / double(n);
      std::vector<double> probs(n);
      for (std::size_t i = 0; i < n; ++i) probs[i] = layer.routing.probs.at(t, i);
      std::partial_sort(probs.begin(), probs.begin() + std::min<std::size_t>(2, n), probs.end(), std::greater<>());
      r.top1 = probs[0];
      r.top2 = n > 1 ? probs[1] : 0.0;
      trace.tokens.push_back(std::move(r));
    }
  }
}

Trace capture_trace(const Model& model, const std::vector<TokenBatch>& batches, const std::string& tag) {
  Trace trace;
  trace.header = trace_header(model.config());
  for (std::size_t b = 0; b < batches.size(); ++b) append_forward(trace, model.forward(batches[b]), batches[b], b, tag);
  return trace;
}

void write_trace(std::ostream& out, const Trace& trace) {
  const auto& h = trace.header;
  out << json{{"type", "header"},         {"schema", "moepp-trace"},   {"version", kTraceVersion},
              {"layer", to_json(h.layer)}, {"layers", h.layers},       {"hidden", h.hidden},
              {"intermediate", h.intermediate}, {"vocab", h.vocab}}
             .dump()
      << '\n';
  // Interleave: each plan record, then its token records.
  std::size_t ti = 0;
  for (const auto& p : trace.plans) {
    out << json{{"type", "plan"},         {"batch", p.batch},       {"layer", p.layer},
                {"tokens", p.tokens},     {"capacity", p.capacity}, {"assigned", p.assigned},
                {"dropped_pairs", p.dropped_pairs}}
               .dump()
        << '\n';
    for (; ti < trace.tokens.size() && trace.tokens[ti].batch == p.batch && trace.tokens[ti].layer == p.layer; ++ti) {
      const auto& r = trace.tokens[ti];
      out << json{{"type", "token"},       {"batch", r.batch},
                  {"layer", r.layer},      {"pos", r.pos},
                  {"token_id", r.token_id}, {"tag", r.tag},
                  {"selected", r.selected}, {"gates", r.gates},
                  {"dropped", r.dropped},  {"logit_mean", r.logit_mean},
                  {"logit_var", r.logit_var}, {"top", {r.top1, r.top2}}}
                 .dump()
          << '\n';
    }
  }
  if (ti != trace.tokens.size()) throw ArgumentError("write_trace: token records out of plan order");
}

void write_trace(const std::string& path, const Trace& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write trace: " + path);
  write_trace(out, trace);
}

Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        if (j.at("schema") != "moepp-trace") throw ArgumentError("not a moepp trace");
        if (j.at("version") != kTraceVersion) throw ArgumentError("unsupported trace version");
        auto& h = trace.header;
        h.layer = layer_config_from_json(j.at("layer"), "trace.layer");
        h.layers = j.at("layers");
        h.hidden = j.at("hidden");
        h.intermediate = j.at("intermediate");
        h.vocab = j.at("vocab");
        have_header = true;
      } else if (!have_header) {
        throw ArgumentError("record before header");
      } else if (type == "plan") {
        PlanRecord p{j.at("batch"), j.at("layer"), j.at("tokens"), j.at("capacity"), j.at("assigned"),
                     j.at("dropped_pairs")};
        trace.plans.push_back(std::move(p));
      } else if (type == "token") {
        TokenRecord r;
        r.batch = j.at("batch");
        r.layer = j.at("layer");
        r.pos = j.at("pos");
        r.token_id = j.at("token_id");
        r.tag = j.at("tag");
        r.selected = j.at("selected").get<std::vector<std::size_t>>();
        r.gates = j.at("gates").get<std::vector<double>>();
        r.dropped = j.at("dropped").get<std::vector<std::size_t>>();
        r.logit_mean = j.at("logit_mean");
        r.logit_var = j.at("logit_var");
        r.top1 = j.at("top").at(0);
        r.top2 = j.at("top").at(1);
        if (r.selected.size() != r.gates.size()) throw ArgumentError("selected/gates length mismatch");
        trace.tokens.push_back(std::move(r));
      } else {
        throw ArgumentError("unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw ArgumentError("trace line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ArgumentError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw ArgumentError("trace has no header");
  return trace;
}

Trace read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read trace: " + path);
  return read_trace(in);
}

std::vector<DispatchPlan> plans_from_trace(const Trace& trace) {
  const std::size_t n = trace.header.layer.n_experts();
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  std::vector<DispatchPlan> plans;
  for (const auto& p : trace.plans) {
    if (p.capacity.size() != n) throw ArgumentError("plan record expert count does not match trace header");
    DispatchPlan d;
    d.capacity = p.capacity;
    d.assigned.resize(n);
    d.kept.resize(p.tokens);
    d.dropped.resize(p.tokens);
    index[{p.batch, p.layer}] = plans.size();
    plans.push_back(std::move(d));
  }
  for (const auto& r : trace.tokens) {
    auto it = index.find({r.batch, r.layer});
    if (it == index.end()) throw ArgumentError("token record without plan record");
    auto& d = plans[it->second];
    if (r.pos >= d.tokens()) throw ArgumentError("token position out of range");
    for (std::size_t s = 0; s < r.selected.size(); ++s) {
      const auto e = r.selected[s];
      if (e >= n) throw ArgumentError("selected expert out of range");
      RoutedPair pair{e, r.gates[s]};
      if (std::find(r.dropped.begin(), r.dropped.end(), e) != r.dropped.end()) {
        d.dropped[r.pos].push_back(pair);
      } else {
        d.kept[r.pos].push_back(pair);
        d.assigned[e].push_back(r.pos);
      }
    }
  }
  for (auto& d : plans)
    for (auto& a : d.assigned) std::sort(a.begin(), a.end());
  return plans;
}

}  // namespace moepp
