#pragma once

#include "lfsd/denoiser.hpp"
#include "lfsd/rng.hpp"
#include "lfsd/schedule.hpp"

#include <vector>

namespace lfsd {

// Guided noise prediction for a batch sharing one step and one token.
// g == 1 skips the unconditional branch.
template <typename Scalar>
MatrixX<Scalar> guided_noise(const BasicDenoiser<Scalar>& model, const MatrixX<Scalar>& z, Step t,
                             TokenId token, Scalar g) {
  if (g == Scalar(1) || token == kNullToken) return model.forward(z, t, token);
  const Eigen::Index n = z.cols();
  MatrixX<Scalar> both(z.rows(), 2 * n);
  both << z, z;
  std::vector<TokenId> tokens(2 * n, kNullToken);
  std::fill(tokens.begin(), tokens.begin() + n, token);
  const std::vector<Step> steps(2 * n, t);
  const MatrixX<Scalar> eps = model.forward(both, steps, tokens);
  return cfg_combine(eps.leftCols(n), eps.rightCols(n), g);
}

// Per-column tokens variant used for composed multi-concept contexts.
template <typename Scalar>
MatrixX<Scalar> guided_noise(const BasicDenoiser<Scalar>& model, const MatrixX<Scalar>& z, Step t,
                             std::span<const TokenId> tokens, Scalar g) {
  const Eigen::Index n = z.cols();
  if (g == Scalar(1)) return model.forward(z, std::vector<Step>(n, t), tokens);
  MatrixX<Scalar> both(z.rows(), 2 * n);
  both << z, z;
  std::vector<TokenId> all(tokens.begin(), tokens.end());
  all.resize(2 * n, kNullToken);
  const MatrixX<Scalar> eps = model.forward(both, std::vector<Step>(2 * n, t), all);
  return cfg_combine(eps.leftCols(n), eps.rightCols(n), g);
}

// Runs the reverse chain from step `from - 1` down to 0, starting at z.
template <typename Scalar, typename TokenArg>
MatrixX<Scalar> reverse_diffusion(const BasicDenoiser<Scalar>& model, MatrixX<Scalar> z,
                                  int from, const TokenArg& token,
                                  const NoiseSchedule<Scalar>& sched, Scalar g, Rng& rng) {
  for (int t = from - 1; t >= 0; --t) {
    const MatrixX<Scalar> eps = guided_noise(model, z, sched.step(t), token, g);
    if (t > 0) {
      const MatrixX<Scalar> noise = rng.normal(z.rows(), z.cols()).template cast<Scalar>();
      z = ddpm_step(z, t, eps, sched, &noise);
    } else {
      z = ddpm_step(z, t, eps, sched);
    }
  }
  return z;
}

// n independent ancestral samples from z_T ~ N(0, I); one column per sample.
template <typename Scalar>
MatrixX<Scalar> sample(const BasicDenoiser<Scalar>& model, TokenId token,
                       const NoiseSchedule<Scalar>& sched, Scalar g, Rng& rng, int n) {
  const int d = model.config().data_dim;
  if (n <= 0) return MatrixX<Scalar>(d, 0);
  model.check_token(token);
  MatrixX<Scalar> z = rng.normal(d, n).template cast<Scalar>();
  return reverse_diffusion(model, std::move(z), sched.steps, token, sched, g, rng);
}

}  // namespace lfsd
