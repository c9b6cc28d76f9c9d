#include "epmvg/optim.hpp"

#include <cmath>

#include "epmvg/errors.hpp"

namespace epmvg::distill {

using numcore::ParamStore;
using numcore::Tensor;

void AdamWConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw ConfigError("optimizer lr must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0))
    throw ConfigError("optimizer beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("optimizer beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer eps must be > 0");
  if (!(weight_decay >= 0.0))
    throw ConfigError("optimizer weight_decay must be >= 0");
}

AdamW::AdamW(ParamStore& params, AdamWConfig cfg, LrMultiplier multiplier)
    : params_(&params),
      cfg_(cfg),
      multiplier_(std::move(multiplier)),
      state_(params.seed()) {
  cfg_.validate();
  for (const std::string& name : params.names()) {
    const Tensor p = params.get(name);
    state_.add_zeros("opt.m/" + name, p.shape());
    state_.add_zeros("opt.v/" + name, p.shape());
  }
}

void AdamW::set_lr(double lr) {
  AdamWConfig probe = cfg_;
  probe.lr = lr;
  probe.validate();
  cfg_.lr = lr;
}

double AdamW::lr_for(const std::string& name) const {
  return cfg_.lr * (multiplier_ ? multiplier_(name) : 1.0);
}

void AdamW::step() {
  const std::uint64_t t = steps_ + 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t));

  for (const std::string& name : params_->names()) {
    Tensor p = params_->get(name);
    if (!p.requires_grad()) continue;

    if (!state_.has("opt.m/" + name))
      throw ContractError("parameter '" + name +
                          "' has no optimizer state; it was registered after "
                          "the optimizer was built");
    Tensor m = state_.get("opt.m/" + name);
    Tensor v = state_.get("opt.v/" + name);
    if (m.size() != p.size() || v.size() != p.size())
      throw ContractError("optimizer moment state for '" + name +
                          "' does not match the parameter size");

    const double lr_eff = lr_for(name);
    auto pd = p.mut_data();
    auto md = m.mut_data();
    auto vd = v.mut_data();
    const bool has_grad = p.has_grad();
    const auto gd = has_grad ? p.grad() : std::span<const double>{};

    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double g = has_grad ? gd[i] : 0.0;
      pd[i] -= lr_eff * cfg_.weight_decay * pd[i];
      md[i] = cfg_.beta1 * md[i] + (1.0 - cfg_.beta1) * g;
      vd[i] = cfg_.beta2 * vd[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = md[i] / bc1;
      const double v_hat = vd[i] / bc2;
      pd[i] -= lr_eff * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
  steps_ = t;
}

}  // namespace epmvg::distill
