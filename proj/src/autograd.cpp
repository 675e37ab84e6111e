#include "moepp/autograd.hpp"

namespace moepp {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::record(std::string op, std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> backward) {
  if (consumed_) throw ArgumentError("cannot record on a consumed tape");
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ArgumentError("tape already consumed by a backward pass");
  if (loss.numel() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  consumed_ = true;
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    auto& node = nodes_[i];
    visit_order_.push_back(i);
    // Nodes whose output never received a gradient contribute nothing.
    if (node.output.has_grad()) node.backward();
  }
  // Release saved intermediates.
  for (auto& node : nodes_) {
    node.backward = nullptr;
    node.inputs.clear();
  }
}

}  // namespace moepp
