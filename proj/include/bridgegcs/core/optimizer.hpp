#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "bridgegcs/core/mlp.hpp"
#include "bridgegcs/core/tensor.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs {

/// Adaptive moment estimation state. Moment buffers are created on the first step
/// and must keep mirroring the parameter shapes afterwards. A zero gradient entry
/// never moves its parameter.
struct OptimizerState {
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

inline OptimizerState make_optimizer(double learning_rate) {
  OptimizerState s;
  s.learning_rate = learning_rate;
  return s;
}

inline void optimizer_step(OptimizerState& state, std::span<Tensor* const> params,
                           std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) throw RejectedInput("optimizer_step: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(*grads[k])) throw RejectedInput("optimizer_step: gradient shape mismatch");
    if (!grads[k]->all_finite()) throw DivergenceError("optimizer_step: non-finite gradient");
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw RejectedInput("optimizer_step: state/parameter mismatch");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    if (!m.same_shape(p)) throw RejectedInput("optimizer_step: moment shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      // Entries without gradient signal this step stay put; moments still decay.
      if (gi == 0.0) continue;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

inline void optimizer_step(OptimizerState& state, MlpParams& params, const MlpParams& grads) {
  auto p = parameter_tensors(params);
  auto g = parameter_tensors(grads);
  optimizer_step(state, p, g);
}

}  // namespace bridgegcs
