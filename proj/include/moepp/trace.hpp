#pragma once

// Routing trace files: line-delimited JSON, one record per line.
//
//   {"type":"header","schema":"moepp-trace","version":1,"layer":{...},
//    "layers":L,"hidden":D,"intermediate":D_int,"vocab":V}
//   {"type":"plan","batch":b,"layer":j,"tokens":T,"capacity":[...],
//    "assigned":[...],"dropped_pairs":n}
//   {"type":"token","batch":b,"layer":j,"pos":t,"token_id":id,"tag":"...",
//    "selected":[...],"gates":[...],"dropped":[...],"logit_mean":m,
//    "logit_var":v,"top":[p1,p2]}
//
// "selected" lists experts in descending logit order with matching "gates";
// "dropped" is the subset that lost its slot to capacity. "top" holds the
// two largest softmax probabilities. Plan records precede the token records
// of the same (batch, layer).

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "moepp/model.hpp"
#include "moepp/moe_layer.hpp"

namespace moepp {

inline constexpr int kTraceVersion = 1;

struct TraceHeader {
  LayerConfig layer;
  std::size_t layers = 0;
  std::size_t hidden = 0;
  std::size_t intermediate = 0;
  std::size_t vocab = 0;
};

struct PlanRecord {
  std::size_t batch = 0;
  std::size_t layer = 0;
  std::size_t tokens = 0;
  std::vector<std::size_t> capacity;
  std::vector<std::size_t> assigned;  // count per expert
  std::size_t dropped_pairs = 0;
};

struct TokenRecord {
  std::size_t batch = 0;
  std::size_t layer = 0;
  std::size_t pos = 0;  // row in the batch's flattened token matrix
  std::size_t token_id = 0;
  std::string tag;
  std::vector<std::size_t> selected;
  std::vector<double> gates;
  std::vector<std::size_t> dropped;
  double logit_mean = 0.0;
  double logit_var = 0.0;
  double top1 = 0.0;
  double top2 = 0.0;
};

struct Trace {
  TraceHeader header;
  std::vector<PlanRecord> plans;
  std::vector<TokenRecord> tokens;
};

TraceHeader trace_header(const ModelConfig& cfg);

/// Records for one forward pass over `inputs` (batch index `batch`).
void append_forward(Trace& trace, const ForwardResult& fwd, const TokenBatch& inputs, std::size_t batch,
                    const std::string& tag);

/// Runs `model` on each batch (no gradient tape) and records the routing.
Trace capture_trace(const Model& model, const std::vector<TokenBatch>& batches, const std::string& tag);

void write_trace(std::ostream& out, const Trace& trace);
void write_trace(const std::string& path, const Trace& trace);
/// Strict reader: schema or version mismatch raises ArgumentError.
Trace read_trace(std::istream& in);
Trace read_trace(const std::string& path);

/// Rebuilds one DispatchPlan per (batch, layer), in file order.
std::vector<DispatchPlan> plans_from_trace(const Trace& trace);

}  // namespace moepp
