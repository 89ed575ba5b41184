// SPDX-License-Identifier: Apache-2.0
#include "diplab/optim.hpp"

#include <cmath>

#include "diplab/error.hpp"

namespace diplab {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::gd ? "gd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "gd" || s == "sgd") return OptimizerKind::gd;
  if (s == "adam") return OptimizerKind::adam;
  throw Error(ErrorKind::config, "unknown optimizer '" + s + "'");
}

void adam_update(Tensor& param, AdamMoments& state, const Tensor& grad, double lr, std::size_t t,
                 const AdamConfig& cfg) {
  require(grad.shape() == param.shape(), ErrorKind::shape, "gradient shape does not match parameter");
  if (state.m.empty()) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  auto p = param.data();
  auto m = state.m.data();
  auto v = state.v.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void Optimizer::step(LeafValues& values, const Gradient& grad, double lr, const LrScale* scale) {
  ++t_;
  for (const auto& [name, g] : grad) {
    auto it = values.find(name);
    require(it != values.end(), ErrorKind::unbound_leaf, "optimizer has no value for '" + name + "'");
    double rate = lr;
    if (scale) {
      auto s = scale->find(name);
      if (s != scale->end()) rate *= s->second;
    }
    if (kind_ == OptimizerKind::gd) {
      require(g.shape() == it->second.shape(), ErrorKind::shape, "gradient shape does not match parameter");
      it->second.flat() -= rate * g.flat();
    } else {
      adam_update(it->second, moments_[name], g, rate, t_, cfg_);
    }
  }
}

}  // namespace diplab
