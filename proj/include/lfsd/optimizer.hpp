#pragma once

#include "lfsd/types.hpp"

#include <cmath>

namespace lfsd {

// First/second moment estimates for an adaptive-moment update.
template <typename Scalar>
struct AdamState {
  VectorX<Scalar> m;
  VectorX<Scalar> v;
  long step = 0;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);

  AdamState() = default;
  explicit AdamState(Eigen::Index n) : m(VectorX<Scalar>::Zero(n)), v(VectorX<Scalar>::Zero(n)) {}
};

template <typename Scalar>
void optimizer_step(VectorX<Scalar>& params, const VectorX<Scalar>& grad, AdamState<Scalar>& state,
                    Scalar lr) {
  if (grad.size() != params.size()) throw ShapeError("optimizer_step: gradient size mismatch");
  if (state.m.size() != params.size()) {
    state.m = VectorX<Scalar>::Zero(params.size());
    state.v = VectorX<Scalar>::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = state.beta1 * state.m + (Scalar(1) - state.beta1) * grad;
  state.v = state.beta2 * state.v + (Scalar(1) - state.beta2) * grad.cwiseAbs2();
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, Scalar(state.step));
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, Scalar(state.step));
  params.array() -= (lr / c1) * state.m.array() / ((state.v.array() / c2).sqrt() + state.epsilon);
}

template <typename Model, typename Scalar>
void optimizer_step(Model& model, const VectorX<Scalar>& grad, AdamState<Scalar>& state, Scalar lr) {
  optimizer_step(model.params(), grad, state, lr);
}

}  // namespace lfsd
