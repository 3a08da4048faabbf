#include "lfsd/concepts.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lfsd {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSpiralTurns = 3.0 * kPi;
const Vec2 kMoonOffset(0.5, 0.25);

Eigen::Matrix2d rotation_matrix(double angle) { return Eigen::Rotation2Dd(angle).toRotationMatrix(); }

Vec2 noiseless_shape(Family family, Rng& rng) {
  switch (family) {
    case Family::ring: {
      const double a = 2.0 * kPi * rng.uniform();
      return {std::cos(a), std::sin(a)};
    }
    case Family::two_moons: {
      const bool lower = rng.uniform() < 0.5;
      const double a = kPi * rng.uniform();
      Vec2 p = lower ? Vec2(1.0 - std::cos(a), 0.5 - std::sin(a)) : Vec2(std::cos(a), std::sin(a));
      return p - kMoonOffset;
    }
    case Family::spiral: {
      const double a = kSpiralTurns * std::sqrt(rng.uniform());
      const double r = a / kSpiralTurns;
      return {r * std::cos(a), r * std::sin(a)};
    }
    case Family::blobs:
      return Vec2::Zero();
    case Family::grid:
      return {double(rng.index(3) - 1), double(rng.index(3) - 1)};
  }
  throw ConfigError("unknown concept family");
}

double arc_distance(const Vec2& p, const Vec2& center, double a0, double a1) {
  const Vec2 q = p - center;
  double angle = std::atan2(q.y(), q.x());
  if (angle < a0 - 1e-12) angle += 2.0 * kPi;
  if (angle >= a0 && angle <= a1) return std::abs(q.norm() - 1.0);
  const Vec2 e0 = center + Vec2(std::cos(a0), std::sin(a0));
  const Vec2 e1 = center + Vec2(std::cos(a1), std::sin(a1));
  return std::min((p - e0).norm(), (p - e1).norm());
}

}  // namespace

Family parse_family(const std::string& name) {
  if (name == "ring") return Family::ring;
  if (name == "two_moons") return Family::two_moons;
  if (name == "spiral") return Family::spiral;
  if (name == "blobs") return Family::blobs;
  if (name == "grid") return Family::grid;
  throw ConfigError("unknown concept family '" + name + "'");
}

std::string to_string(Family family) {
  switch (family) {
    case Family::ring: return "ring";
    case Family::two_moons: return "two_moons";
    case Family::spiral: return "spiral";
    case Family::blobs: return "blobs";
    case Family::grid: return "grid";
  }
  return "unknown";
}

void ConceptSpec::validate() const {
  if (!(scale > 0.0)) throw ConfigError("concept '" + name + "': scale must be > 0");
  if (!(noise_std >= 0.0)) throw ConfigError("concept '" + name + "': noise_std must be >= 0");
  if (data_dim < 2) throw ConfigError("concept '" + name + "': data_dim must be >= 2");
  if (!center.allFinite() || !std::isfinite(rotation))
    throw ConfigError("concept '" + name + "': center/rotation must be finite");
}

LatentSet sample_concept(const ConceptSpec& spec, int n, Rng& rng) {
  spec.validate();
  if (n < 0) throw ConfigError("sample count must be >= 0");
  const Eigen::Matrix2d rot = rotation_matrix(spec.rotation);
  LatentSet out(spec.data_dim, n);
  for (int j = 0; j < n; ++j) {
    const Vec2 shape = noiseless_shape(spec.family, rng);
    const double spread = spec.family == Family::blobs ? spec.scale * spec.noise_std : spec.noise_std;
    Vec2 p = spec.center + spec.scale * (rot * shape);
    if (spread > 0.0) p += spread * Vec2(rng.normal(), rng.normal());
    out.col(j).head<2>() = p;
    for (int k = 2; k < spec.data_dim; ++k) out(k, j) = spread > 0.0 ? spread * rng.normal() : 0.0;
  }
  return out;
}

double manifold_distance(const ConceptSpec& spec, const Latent& x) {
  const Vec2 local = rotation_matrix(-spec.rotation) * (x.head<2>() - spec.center) / spec.scale;
  double extra = x.size() > 2 ? x.tail(x.size() - 2).norm() : 0.0;
  double d = 0.0;
  switch (spec.family) {
    case Family::ring:
      d = std::abs(local.norm() - 1.0);
      break;
    case Family::blobs:
      d = local.norm();
      break;
    case Family::grid: {
      const Vec2 node(std::clamp(std::round(local.x()), -1.0, 1.0),
                      std::clamp(std::round(local.y()), -1.0, 1.0));
      d = (local - node).norm();
      break;
    }
    case Family::two_moons: {
      const Vec2 p = local + kMoonOffset;
      d = std::min(arc_distance(p, Vec2(0.0, 0.0), 0.0, kPi),
                   arc_distance(p, Vec2(1.0, 0.5), kPi, 2.0 * kPi));
      break;
    }
    case Family::spiral: {
      d = std::numeric_limits<double>::infinity();
      constexpr int kProbe = 20000;
      for (int i = 0; i <= kProbe; ++i) {
        const double a = kSpiralTurns * double(i) / kProbe;
        const double r = a / kSpiralTurns;
        d = std::min(d, (local - Vec2(r * std::cos(a), r * std::sin(a))).norm());
      }
      break;
    }
  }
  return std::hypot(d * spec.scale, extra);
}

ConceptSpec derive_session_concept(const ConceptSpec& base, const ConceptTransform& transform,
                                   TokenId new_token, const std::set<TokenId>& used_tokens,
                                   std::string name) {
  base.validate();
  if (new_token == base.token || used_tokens.count(new_token))
    throw ConfigError("token " + std::to_string(new_token) + " is already in use");
  if (!(transform.scale_mul > 0.0)) throw ConfigError("transform.scale_mul must be > 0");
  ConceptSpec out = base;
  out.token = new_token;
  out.name = name.empty() ? base.name + "_" + std::to_string(new_token) : std::move(name);
  out.center = base.center + transform.shift;
  out.scale = base.scale * transform.scale_mul;
  out.rotation = base.rotation + transform.rot_add;
  return out;
}

FewShotDataset make_fewshot(const ConceptSpec& spec, int K, Rng& rng) {
  if (K < 1 || K > kMaxShots)
    throw ConfigError("K must lie in [1, " + std::to_string(kMaxShots) + "], got " +
                      std::to_string(K));
  return FewShotDataset{spec, sample_concept(spec, K, rng), K};
}

PromptSets build_prompt_sets(int session_index, std::span<const TokenId> base_vocab,
                             std::span<const SessionConcept> sessions) {
  if (session_index < 1 || session_index > int(sessions.size()))
    throw ConfigError("session index " + std::to_string(session_index) + " out of range");
  PromptSets out;
  out.session_prompts = {sessions[session_index - 1].token};
  out.regularization_prompts.assign(base_vocab.begin(), base_vocab.end());
  for (int i = 0; i < session_index; ++i) {
    const auto& s = sessions[i];
    if (std::find(out.test_prompts.begin(), out.test_prompts.end(), s.token) == out.test_prompts.end())
      out.test_prompts.push_back(s.token);
    if (std::find(out.test_prompts.begin(), out.test_prompts.end(), s.base_token) ==
        out.test_prompts.end())
      out.test_prompts.push_back(s.base_token);
  }
  return out;
}

}  // namespace lfsd
