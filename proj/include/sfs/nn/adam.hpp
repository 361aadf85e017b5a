#pragma once

#include <cmath>
#include <vector>

#include "sfs/nn/params.hpp"

namespace sfs::nn {

struct AdamConfig {
  double beta1 = 0.0;  // first-moment decay; zero per the training recipe
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // coupled (added to the gradient)
};

// One Adam update over every entry of the store. grads[i] may be empty when
// the parameter did not influence the loss; weight decay still applies.
inline void adam_step(ParamStore& store, const std::vector<ad::Mat>& grads,
                      double lr, const AdamConfig& cfg) {
  if (static_cast<int>(grads.size()) != store.count())
    throw ContractViolation("adam_step: gradient count mismatch");
  const auto t = static_cast<double>(++store.adam_step());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (int i = 0; i < store.count(); ++i) {
    ParamEntry& e = store.entry(i);
    ad::Mat g = grads[static_cast<std::size_t>(i)].size() == 0
                    ? ad::Mat::Zero(e.value.rows(), e.value.cols())
                    : grads[static_cast<std::size_t>(i)];
    if (cfg.weight_decay != 0.0) g += cfg.weight_decay * e.value;
    e.m1 = cfg.beta1 * e.m1 + (1.0 - cfg.beta1) * g;
    e.m2 = cfg.beta2 * e.m2.array() + (1.0 - cfg.beta2) * g.array().square();
    const ad::Mat m_hat = e.m1 / bc1;
    const ad::Mat v_hat = e.m2 / bc2;
    e.value.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + cfg.eps);
  }
}

}  // namespace sfs::nn
