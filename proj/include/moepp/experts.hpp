#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "moepp/tensor.hpp"

namespace moepp {

enum class ExpertKind { FFN, Zero, Copy, Constant };

std::string_view to_string(ExpertKind kind);
/// Zero, copy and constant experts.
inline bool is_zero_computation(ExpertKind kind) { return kind != ExpertKind::FFN; }

/// Nonlinearity between the two FFN matmuls.
enum class Activation { Gelu, Relu };

std::string_view to_string(Activation act);
/// "gelu" or "relu"; anything else is an ArgumentError.
Activation activation_from_string(std::string_view name);

struct ExpertSpec {
  ExpertKind kind = ExpertKind::FFN;
  std::size_t hidden = 0;
  std::size_t intermediate = 0;  // FFN only
  Activation activation = Activation::Gelu;  // FFN only

  void validate() const;
};

/// Closed-form trainable parameter count: FFN 2*D*D_int + D_int + D,
/// constant 3*D (v plus the 2xD mixing matrix), zero/copy 0.
std::size_t parameter_count(const ExpertSpec& spec);

struct FfnWeights {
  Tensor w1;  // D_int x D
  Tensor b1;  // D_int
  Tensor w2;  // D x D_int
  Tensor b2;  // D
};

struct ConstantWeights {
  Tensor v;    // D
  Tensor w_c;  // 2 x D
};

/// W2 * act(W1 x + b1) + b2, applied to each row of x.
Tensor ffn_forward(const Tensor& x, const FfnWeights& w, Activation act = Activation::Gelu);
/// Always zero; no gradient reaches x.
Tensor zero_forward(const Tensor& x);
/// Returns x itself.
Tensor copy_forward(const Tensor& x);
/// Per row: [a1, a2] = softmax(W_c x); a1 * x + a2 * v.
Tensor constant_forward(const Tensor& x, const Tensor& v, const Tensor& w_c);

/// One expert with its parameters. Zero and copy experts own none.
class Expert {
 public:
  Expert() = default;
  Expert(ExpertSpec spec, std::mt19937_64& rng);
  Expert(ExpertSpec spec, FfnWeights weights);
  Expert(ExpertSpec spec, ConstantWeights weights);

  const ExpertSpec& spec() const { return spec_; }
  ExpertKind kind() const { return spec_.kind; }
  Tensor forward(const Tensor& x) const;

  /// Trainable tensors with stable names relative to the expert.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  const FfnWeights& ffn() const { return ffn_; }
  const ConstantWeights& constant() const { return constant_; }

 private:
  ExpertSpec spec_;
  FfnWeights ffn_;
  ConstantWeights constant_;
};

/// Gaussian(0, stddev) matrix/vector initialiser shared by all modules.
Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad = true);

}  // namespace moepp
