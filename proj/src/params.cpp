#include "epmvg/params.hpp"

#include <cmath>

#include "epmvg/errors.hpp"
#include "epmvg/rng.hpp"

namespace epmvg::numcore {

namespace {

std::size_t find_index(const std::vector<std::string>& order,
                       const std::string& name) {
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == name) return i;
  return order.size();
}

}  // namespace

Tensor ParamStore::add_xavier(const std::string& name, Shape shape,
                              std::size_t fan_in, std::size_t fan_out) {
  if (fan_in == 0 || fan_out == 0)
    throw ParamError("xavier init for '" + name + "': zero fan");
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed_, "init:" + name);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-limit, limit);
  return add_existing(name,
                      Tensor::from_data(std::move(shape), std::move(v), true));
}

Tensor ParamStore::add_zeros(const std::string& name, Shape shape) {
  return add_existing(name, Tensor::zeros(std::move(shape), true));
}

Tensor ParamStore::add_full(const std::string& name, Shape shape,
                            double value) {
  return add_existing(name, Tensor::full(std::move(shape), value, true));
}

Tensor ParamStore::add_existing(const std::string& name, Tensor t) {
  if (name.empty()) throw ParamError("parameter name must be nonempty");
  if (has(name)) throw ParamError("duplicate parameter name '" + name + "'");
  if (!t.defined()) throw ParamError("undefined tensor for '" + name + "'");
  order_.push_back(name);
  tensors_.push_back(t);
  return t;
}

bool ParamStore::has(const std::string& name) const {
  return find_index(order_, name) < order_.size();
}

Tensor ParamStore::get(const std::string& name) const {
  const std::size_t i = find_index(order_, name);
  if (i == order_.size())
    throw ParamError("unknown parameter '" + name + "'");
  return tensors_[i];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

void ParamStore::set_requires_grad(bool value) {
  for (Tensor& t : tensors_) t.impl()->requires_grad = value;
}

void ParamStore::zero_grads() {
  for (Tensor& t : tensors_) t.zero_grad();
}

}  // namespace epmvg::numcore
