#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pvit/tensor.hpp"

namespace pvit {

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// true: param -= lr·wd·param before the moment update (AdamW). false: wd·param is added to the gradient.
  bool decoupled_weight_decay = true;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update. State is zero-initialized on first use.
/// Throws NonFiniteError naming the parameter when its gradient holds NaN/Inf.
void adam_step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& config);

}  // namespace pvit
