#pragma once

#include "lfsd/types.hpp"

#include <cmath>
#include <string>

namespace lfsd {

enum class Spacing { linear };

// Beta / alpha / alpha-bar tables of a T-step forward process.
template <typename Scalar>
struct NoiseSchedule {
  int steps = 0;
  VectorX<Scalar> betas;
  VectorX<Scalar> alphas;
  VectorX<Scalar> alpha_bars;

  // beta_tilde_t = beta_t (1 - abar_{t-1}) / (1 - abar_t); zero at t = 0.
  Scalar posterior_variance(int t) const {
    if (t == 0) return Scalar(0);
    return betas[t] * (Scalar(1) - alpha_bars[t - 1]) / (Scalar(1) - alpha_bars[t]);
  }

  Step step(int t) const { return Step{t, steps}; }

  void check_index(int t) const {
    if (t < 0 || t >= steps)
      throw IndexError("step index " + std::to_string(t) + " outside [0, " +
                       std::to_string(steps) + ")");
  }
};

using Schedule = NoiseSchedule<double>;

template <typename Scalar = double>
NoiseSchedule<Scalar> make_schedule(int steps, Scalar beta_start, Scalar beta_end,
                                    Spacing spacing = Spacing::linear) {
  if (steps < 1) throw ConfigError("schedule.steps must be >= 1, got " + std::to_string(steps));
  if (!(beta_start > Scalar(0)) || !(beta_start < Scalar(1)))
    throw ConfigError("schedule.beta_start must lie in (0, 1)");
  if (!(beta_end >= beta_start) || !(beta_end < Scalar(1)))
    throw ConfigError("schedule.beta_end must lie in [beta_start, 1)");
  (void)spacing;

  NoiseSchedule<Scalar> s;
  s.steps = steps;
  s.betas.resize(steps);
  if (steps == 1) {
    s.betas[0] = beta_start;
  } else {
    for (int t = 0; t < steps; ++t)
      s.betas[t] = beta_start + (beta_end - beta_start) * Scalar(t) / Scalar(steps - 1);
  }
  s.alphas = VectorX<Scalar>::Ones(steps) - s.betas;
  s.alpha_bars.resize(steps);
  Scalar running(1);
  for (int t = 0; t < steps; ++t) {
    running *= s.alphas[t];
    s.alpha_bars[t] = running;
  }
  return s;
}

// Linear schedule whose beta range is given for a `reference_steps`-long
// process and rescaled to `steps`, so that short schedules still end close
// to pure noise.
template <typename Scalar = double>
NoiseSchedule<Scalar> make_scaled_schedule(int steps, Scalar beta_start, Scalar beta_end,
                                           int reference_steps = 1000) {
  if (steps < 1) throw ConfigError("schedule.steps must be >= 1, got " + std::to_string(steps));
  const Scalar factor = Scalar(reference_steps) / Scalar(steps);
  return make_schedule<Scalar>(steps, beta_start * factor, beta_end * factor);
}

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. Works column-wise on batches.
template <typename Scalar, typename D0, typename D1>
MatrixX<Scalar> forward_noise(const Eigen::MatrixBase<D0>& z0, int t,
                              const Eigen::MatrixBase<D1>& eps,
                              const NoiseSchedule<Scalar>& sched) {
  sched.check_index(t);
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols())
    throw ShapeError("forward_noise: z0 and eps shapes differ");
  const Scalar ab = sched.alpha_bars[t];
  return std::sqrt(ab) * z0 + std::sqrt(Scalar(1) - ab) * eps;
}

// Posterior mean of z_{t-1} given the noise prediction.
template <typename Scalar, typename D0, typename D1>
MatrixX<Scalar> posterior_mean(const Eigen::MatrixBase<D0>& z_t, int t,
                               const Eigen::MatrixBase<D1>& eps_pred,
                               const NoiseSchedule<Scalar>& sched) {
  sched.check_index(t);
  if (z_t.rows() != eps_pred.rows() || z_t.cols() != eps_pred.cols())
    throw ShapeError("ddpm_step: z_t and eps_pred shapes differ");
  const Scalar coef = sched.betas[t] / std::sqrt(Scalar(1) - sched.alpha_bars[t]);
  return (z_t - coef * eps_pred) / std::sqrt(sched.alphas[t]);
}

// One ancestral step z_t -> z_{t-1}. `noise` may be null (deterministic);
// at t = 0 no noise is added regardless.
template <typename Scalar, typename D0, typename D1>
MatrixX<Scalar> ddpm_step(const Eigen::MatrixBase<D0>& z_t, int t,
                          const Eigen::MatrixBase<D1>& eps_pred,
                          const NoiseSchedule<Scalar>& sched,
                          const MatrixX<Scalar>* noise = nullptr) {
  MatrixX<Scalar> mean = posterior_mean(z_t, t, eps_pred, sched);
  if (t > 0 && noise != nullptr) {
    if (noise->rows() != mean.rows() || noise->cols() != mean.cols())
      throw ShapeError("ddpm_step: noise shape differs from z_t");
    mean += std::sqrt(sched.posterior_variance(t)) * (*noise);
  }
  return mean;
}

// d z_{t-1} / d eps_pred for the posterior mean (a scalar multiple of I).
template <typename Scalar>
Scalar posterior_mean_eps_gain(int t, const NoiseSchedule<Scalar>& sched) {
  return -sched.betas[t] / (std::sqrt(Scalar(1) - sched.alpha_bars[t]) * std::sqrt(sched.alphas[t]));
}

// Classifier-free guidance: eps_uncond + g (eps_cond - eps_uncond).
template <typename D0, typename D1>
auto cfg_combine(const Eigen::MatrixBase<D0>& eps_cond, const Eigen::MatrixBase<D1>& eps_uncond,
                 typename D0::Scalar g) {
  using Scalar = typename D0::Scalar;
  if (eps_cond.rows() != eps_uncond.rows() || eps_cond.cols() != eps_uncond.cols())
    throw ShapeError("cfg_combine: conditional and unconditional shapes differ");
  return MatrixX<Scalar>(eps_uncond + g * (eps_cond - eps_uncond));
}

}  // namespace lfsd
