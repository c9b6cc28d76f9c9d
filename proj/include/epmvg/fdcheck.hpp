#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "epmvg/tape.hpp"
#include "epmvg/tensor.hpp"

namespace epmvg::numcore {

struct FdReport {
  std::vector<double> rel_err;  // one entry per coordinate of x
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  bool pass = false;
};

// Scalar function under test. It must build its result from `x` on the
// given tape; closures may wire `x` into a larger graph (e.g. swap it in
// for a model parameter) before running the forward pass.
using FdFunction = std::function<Tensor(Tape&, const Tensor&)>;

// Central-difference gradient check: compares the analytic d f/d x from one
// backward pass against (f(x + h·eᵢ) − f(x − h·eᵢ)) / (2h) per coordinate.
// The relative error denominator is floored at `denom_floor` so near-zero
// gradients are judged on an absolute scale instead of exploding.
// Throws ParamError for h <= 0 and ContractError when two evaluations of f
// at the same x disagree bitwise (f is not deterministic).
FdReport finite_diff_check(const FdFunction& f, const Tensor& x, double h,
                           double tol, double denom_floor = 1e-5);

}  // namespace epmvg::numcore
