#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace epmvg::numcore {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major f64 tensor. Value-semantic handle onto shared storage:
// copies alias the same buffer, which is what the tape relies on. Storage is
// treated as immutable once the tensor has been consumed by an op; parameter
// updates happen between tapes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mut_data();

  // Scalar accessor; throws ContractError unless size() == 1.
  double value() const;
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mut_grad();
  // Allocates the grad buffer (zeroed) if absent, zeroes it otherwise.
  void zero_grad();

  // Deep copy with no grad and no graph history.
  Tensor clone(bool requires_grad = false) const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
};

// Bitwise equality of shape and data. Used by determinism/freeze checks.
bool same_bits(const Tensor& a, const Tensor& b);

}  // namespace epmvg::numcore
