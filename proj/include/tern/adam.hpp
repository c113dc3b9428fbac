#pragma once

#include <string>
#include <unordered_map>

#include "tern/autodiff.hpp"
#include "tern/tensor.hpp"

namespace tern {

// Adam optimizer state. Moments are keyed by parameter name and created
// lazily on the first step; `step` increments by exactly one per
// adam_step call.
struct AdamState {
  long long step = 0;
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  struct Moments {
    Tensor m;
    Tensor v;
  };
  std::unordered_map<std::string, Moments> moments;
};

// Standard Adam update with bias correction over every parameter in the
// store. Gradients are left untouched; clearing them is the caller's job.
// A non-finite gradient raises NumericError naming the parameter.
void adam_step(AdamState& state, ParamStore& params, Precision precision = Precision::f64);

}  // namespace tern
