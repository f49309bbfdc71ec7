#include "pvit/adam.hpp"

#include <cmath>

namespace pvit {

void adam_step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& config) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape(), 0.0);
      state.v.emplace_back(p.value.shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape() || state.m[i].shape() != params[i].value.shape()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + params[i].name);
    }
    if (!grads[i].all_finite()) throw NonFiniteError("adam_step: non-finite gradient for parameter " + params[i].name);
  }

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value.storage();
    const auto& g = grads[i].storage();
    auto& m = state.m[i].storage();
    auto& v = state.v[i].storage();
    for (std::size_t j = 0; j < w.size(); ++j) {
      double gj = g[j];
      if (config.weight_decay != 0.0) {
        if (config.decoupled_weight_decay) {
          w[j] -= config.lr * config.weight_decay * w[j];
        } else {
          gj += config.weight_decay * w[j];
        }
      }
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      const double mhat = m[j] / bias1;
      const double vhat = v[j] / bias2;
      w[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace pvit
