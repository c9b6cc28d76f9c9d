#include "epmvg/tensor.hpp"

#include <cstring>
#include <sstream>

#include "epmvg/errors.hpp"

namespace epmvg::numcore {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

namespace {

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape,
                                              std::vector<double> data,
                                              bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), 0.0);
  return Tensor(make_impl(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), value);
  return Tensor(make_impl(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_impl({1}, {value}, requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  return Tensor(make_impl(std::move(shape), std::move(values), requires_grad));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::size() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mut_data() {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

double Tensor::value() const {
  if (size() != 1) throw ContractError("value() requires a scalar tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size())
    throw ShapeError("index rank " + std::to_string(idx.size()) + " does not match " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= s[axis]) throw ShapeError("index out of range in axis " + std::to_string(axis));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mut_grad() {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_) throw ContractError("use of undefined tensor");
  impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  return from_data(shape(), std::vector<double>(data().begin(), data().end()),
                   requires_grad);
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.size() * sizeof(double)) == 0;
}

}  // namespace epmvg::numcore
