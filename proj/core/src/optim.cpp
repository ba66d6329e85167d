#include "protostream/optim.hpp"

#include <cmath>

#include "protostream/errors.hpp"

namespace protostream {

double global_norm(const GradMap& grads) {
  double acc = 0;
  for (const auto& [name, g] : grads) {
    for (Real x : g.v) acc += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(acc);
}

double clip_global_norm(GradMap& grads, double cap) {
  if (cap <= 0) throw ContractViolation("clip_global_norm: cap must be > 0");
  const double norm = global_norm(grads);
  if (norm > cap) {
    const Real scale = static_cast<Real>(cap / norm);
    for (auto& [name, g] : grads) {
      for (Real& x : g.v) x *= scale;
    }
  }
  return norm;
}

void Adam::step(ParameterStore& params, const GradMap& grads, double lr) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite())
      throw InvariantViolation("adam: non-finite gradient for parameter '" +
                               name + "'");
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.value(name);
    if (!p.same_shape(g))
      throw ContractViolation("adam: gradient shape " + g.shape_str() +
                              " does not match parameter '" + name + "' " +
                              p.shape_str());
    auto [it, fresh] = state_.try_emplace(
        name, Moments{Tensor::zeros(p.shape), Tensor::zeros(p.shape)});
    Moments& mom = it->second;
    for (int i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g.v[i]);
      double m = config_.beta1 * static_cast<double>(mom.m.v[i]) +
                 (1.0 - config_.beta1) * gi;
      double v = config_.beta2 * static_cast<double>(mom.v.v[i]) +
                 (1.0 - config_.beta2) * gi * gi;
      mom.m.v[i] = static_cast<Real>(m);
      mom.v.v[i] = static_cast<Real>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p.v[i] -= static_cast<Real>(lr * mhat /
                                  (std::sqrt(vhat) + config_.epsilon));
    }
  }
}

}  // namespace protostream
