#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "epmvg/params.hpp"

namespace epmvg::distill {

// Decoupled-weight-decay adaptive optimizer (AdamW). Learning rate zero is
// legal here — it expresses "hold everything still" — even though training
// configs reject it.
struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  void validate() const;  // ConfigError on out-of-range values
};

// Maps a parameter name to a learning-rate multiplier, so one optimizer can
// drive several groups (e.g. pretrained-analog parameters at a lower rate).
// An empty function means multiplier 1 for everything.
using LrMultiplier = std::function<double(const std::string& name)>;

class AdamW {
 public:
  AdamW(numcore::ParamStore& params, AdamWConfig cfg,
        LrMultiplier multiplier = {});

  // One update over every parameter that requires grad; a parameter whose
  // gradient buffer was never touched this step counts as zero gradient.
  // Decoupled weight decay lands before the adaptive step:
  //   p -= lr_eff * wd * p
  //   p -= lr_eff * m_hat / (sqrt(v_hat) + eps)
  // with bias-corrected moments m_hat, v_hat.
  void step();

  double lr() const { return cfg_.lr; }
  void set_lr(double lr);
  double lr_for(const std::string& name) const;

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }  // checkpoint resume

  const AdamWConfig& config() const { return cfg_; }

  // First/second moments, named "opt.m/<param>" and "opt.v/<param>". Exposed
  // so checkpoints can carry optimizer state alongside model parameters.
  numcore::ParamStore& state() { return state_; }
  const numcore::ParamStore& state() const { return state_; }

 private:
  numcore::ParamStore* params_;
  AdamWConfig cfg_;
  LrMultiplier multiplier_;
  numcore::ParamStore state_;
  std::uint64_t steps_ = 0;
};

}  // namespace epmvg::distill
