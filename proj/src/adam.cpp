#include "tern/adam.hpp"

#include <cmath>

#include "tern/error.hpp"

namespace tern {

void adam_step(AdamState& state, ParamStore& params, Precision precision) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& p : params.all()) {
    if (!p->grad.all_finite()) {
      throw NumericError("adam_step: non-finite gradient for parameter " + p->name);
    }
    auto [it, inserted] = state.moments.try_emplace(p->name);
    AdamState::Moments& mo = it->second;
    if (inserted) {
      mo.m = Tensor::zeros(p->value.shape);
      mo.v = Tensor::zeros(p->value.shape);
    }
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      const double g = p->grad.data[i];
      mo.m.data[i] = quantized(state.beta1 * mo.m.data[i] + (1.0 - state.beta1) * g, precision);
      mo.v.data[i] = quantized(state.beta2 * mo.v.data[i] + (1.0 - state.beta2) * g * g, precision);
      const double mhat = mo.m.data[i] / bc1;
      const double vhat = mo.v.data[i] / bc2;
      p->value.data[i] =
          quantized(p->value.data[i] - state.lr * mhat / (std::sqrt(vhat) + state.eps), precision);
    }
  }
}

}  // namespace tern
