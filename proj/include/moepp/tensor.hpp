#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moepp {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for out-of-range indices, counts, or otherwise invalid arguments.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation produces NaN or Inf. The current step is aborted.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float64 array. Copies share storage (handle semantics);
/// use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor identity(std::size_t n, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  /// Row count of a 2-D tensor; 1 for a 1-D tensor.
  std::size_t rows() const;
  /// Column count of a 2-D tensor; length of a 1-D tensor.
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Grad buffer, allocated (zero-filled) on first access. Gradient state is
  /// shared by all handles, so this is available on const handles too.
  std::span<double> mutable_grad() const;
  void zero_grad();

  /// Same values, no gradient tracking, independent storage.
  Tensor detach() const;
  Tensor clone() const;
  Tensor reshape(Shape shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace moepp
