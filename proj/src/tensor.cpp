#include "moepp/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace moepp {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got shape " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return Tensor({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
  auto t = zeros({n, n}, requires_grad);
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ArgumentError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::size_t Tensor::rows() const { return dim() == 2 ? shape()[0] : 1; }

std::size_t Tensor::cols() const { return dim() == 2 ? shape()[1] : shape()[0]; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw ArgumentError("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw ArgumentError("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ArgumentError("use of undefined tensor");
  impl_->requires_grad = on;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ArgumentError("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (!impl_) throw ArgumentError("use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, requires_grad()); }

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), impl_->data, false);
}

}  // namespace moepp
