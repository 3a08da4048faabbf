#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lfsd {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;
using Vec2 = Eigen::Vector2d;

// One latent is a column vector in data space; a set of latents is a
// data_dim x n matrix with one latent per column.
using Latent = Vector;
using LatentSet = Matrix;

// Token 0 is reserved for the unconditional (null) prompt.
using TokenId = std::int32_t;
inline constexpr TokenId kNullToken = 0;

// A reverse-diffusion step index together with the length of the schedule
// it belongs to. The denoiser embeds the position within the schedule, so
// the 25-step distillation schedule and the 50-step training schedule land
// on a shared time axis.
struct Step {
  int index = 0;
  int count = 1;
};

// Error taxonomy. Each class maps onto one CLI exit code (see tools/).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct TokenError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
  TrainingError(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  long step;
};
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MetricError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct MissingContextError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace lfsd
