#pragma once

#include <functional>
#include <string>
#include <vector>

#include "moepp/tensor.hpp"

namespace moepp {

/// Reverse-mode recording. Ops executed while a TapeScope is active append a
/// node whenever at least one input requires a gradient. A tape belongs to the
/// thread that activated it; independent tapes may live on different threads.
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and runs node closures in reverse recording
  /// order. A tape can be consumed only once.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  /// Indices of nodes in the order backward() visited them.
  const std::vector<std::size_t>& visit_order() const { return visit_order_; }

 private:
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
  bool consumed_ = false;
};

/// Makes `tape` the active tape of the calling thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Active tape of the calling thread, or nullptr.
Tape* active_tape();

}  // namespace moepp
