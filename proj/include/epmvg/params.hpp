#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epmvg/tensor.hpp"

namespace epmvg::numcore {

// Named registry of trainable tensors. Iteration order is registration
// order, so two models built by the same code see the same order and
// checkpoints serialize canonically. Initialization draws from a stream
// keyed by (seed, parameter name): reordering construction of unrelated
// modules cannot change a parameter's initial values.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  // Xavier-uniform on [-sqrt(6/(fan_in+fan_out)), +...].
  Tensor add_xavier(const std::string& name, Shape shape, std::size_t fan_in,
                    std::size_t fan_out);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor add_full(const std::string& name, Shape shape, double value);
  // Registers an externally built tensor (checkpoint loading).
  Tensor add_existing(const std::string& name, Tensor t);

  bool has(const std::string& name) const;
  Tensor get(const std::string& name) const;  // ParamError when missing
  const std::vector<std::string>& names() const { return order_; }
  std::size_t count() const { return order_.size(); }
  std::size_t scalar_count() const;

  std::uint64_t seed() const { return seed_; }

  // Flips requires_grad on every parameter (teacher freeze/unfreeze).
  void set_requires_grad(bool value);

  void zero_grads();

 private:
  std::uint64_t seed_;
  std::vector<std::string> order_;
  std::vector<Tensor> tensors_;
};

}  // namespace epmvg::numcore
