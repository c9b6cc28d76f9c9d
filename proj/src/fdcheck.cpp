#include "epmvg/fdcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "epmvg/errors.hpp"

namespace epmvg::numcore {

namespace {

double eval_at(const FdFunction& f, const Tensor& x) {
  Tape tape;
  Tensor loss = f(tape, x);
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("finite_diff_check: f must return a scalar");
  return loss.value();
}

}  // namespace

FdReport finite_diff_check(const FdFunction& f, const Tensor& x, double h,
                           double tol, double denom_floor) {
  if (h <= 0.0) throw ParamError("finite_diff_check: h must be positive");
  if (tol <= 0.0) throw ParamError("finite_diff_check: tol must be positive");
  if (!x.defined()) throw ParamError("finite_diff_check: undefined input");

  const double f0 = eval_at(f, x.clone());
  const double f0_again = eval_at(f, x.clone());
  if (std::memcmp(&f0, &f0_again, sizeof(double)) != 0)
    throw ContractError(
        "finite_diff_check: f is not deterministic (two evaluations at the "
        "same point differ)");

  Tensor xg = x.clone(true);
  Tape tape;
  Tensor loss = f(tape, xg);
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("finite_diff_check: f must return a scalar");
  tape.backward(loss);
  if (!xg.has_grad())
    throw ContractError("finite_diff_check: f does not use its argument");

  const std::size_t n = x.size();
  FdReport rep;
  rep.rel_err.resize(n);
  Tensor xp = x.clone();
  for (std::size_t i = 0; i < n; ++i) {
    const double orig = xp.data()[i];
    xp.mut_data()[i] = orig + h;
    const double fp = eval_at(f, xp);
    xp.mut_data()[i] = orig - h;
    const double fm = eval_at(f, xp);
    xp.mut_data()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = xg.grad()[i];
    const double denom =
        std::max({std::fabs(analytic), std::fabs(numeric), denom_floor});
    rep.rel_err[i] = std::fabs(analytic - numeric) / denom;
    if (rep.rel_err[i] > rep.max_rel_err) {
      rep.max_rel_err = rep.rel_err[i];
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace epmvg::numcore
