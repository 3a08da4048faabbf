#include "doctest.h"

#include "lfsd/concepts.hpp"
#include "lfsd/metrics.hpp"

#include <cmath>
#include <vector>

using namespace lfsd;

namespace {

Matrix row(std::initializer_list<double> values) {
  Matrix m(1, Eigen::Index(values.size()));
  Eigen::Index j = 0;
  for (double v : values) m(0, j++) = v;
  return m;
}

ConceptSpec ring(Vec2 center = Vec2::Zero()) {
  ConceptSpec s;
  s.name = "ring";
  s.token = 1;
  s.center = center;
  s.noise_std = 0.05;
  return s;
}

}  // namespace

TEST_CASE("energy distance examples") {
  CHECK(energy_distance(row({0.0}), row({1.0})) == 2.0);
  Rng rng(1);
  const Matrix x = rng.normal(2, 30);
  CHECK(energy_distance(x, x) == 0.0);
  CHECK_THROWS_AS(energy_distance(x, Matrix(2, 0)), MetricError);
  CHECK_THROWS_AS(energy_distance(x, Matrix(rng.normal(3, 4))), MetricError);
}

TEST_CASE("energy distance is symmetric and nonnegative") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + rng.index(4);
    const Matrix x = 3.0 * rng.normal(d, 1 + rng.index(20)).array() + rng.normal();
    const Matrix y = rng.normal(d, 1 + rng.index(20));
    const double xy = energy_distance(x, y);
    CHECK(xy >= 0.0);
    CHECK(xy == doctest::Approx(energy_distance(y, x)).epsilon(1e-12));
  }
}

TEST_CASE("image alignment") {
  Rng rng(3);
  const Matrix x = rng.normal(2, 10);
  CHECK(image_alignment(x, x) == 1.0);
  CHECK(image_alignment(row({0.0}), row({1.0})) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  // Strictly decreasing in ED: move one set away.
  double prev = 2.0;
  for (double shift : {0.0, 0.1, 0.5, 1.0, 3.0}) {
    const Matrix y = x.array() + shift;
    const double ia = image_alignment(x, y);
    CHECK(ia < prev);
    CHECK(ia > 0.0);
    CHECK(ia <= 1.0);
    prev = ia;
  }
}

TEST_CASE("two draws of the same ring pass the permutation test") {
  Rng rng(4);
  const LatentSet a = sample_concept(ring(), 1000, rng);
  const LatentSet b = sample_concept(ring(), 1000, rng);
  const double threshold = energy_permutation_threshold(a, b, 200, 0.05, rng);
  CHECK(energy_distance(a, b) < threshold);

  const LatentSet far = sample_concept(ring(Vec2(0.5, 0.0)), 1000, rng);
  CHECK(energy_distance(a, far) > energy_permutation_threshold(a, far, 200, 0.05, rng));
}

TEST_CASE("text alignment under a uniform probe") {
  ProbeClassifier probe(2, 4, {1, 2, 3, 4, 5});
  Rng rng(5);
  const Matrix x = rng.normal(2, 17);
  CHECK(text_alignment(probe, x, 3) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS_AS(text_alignment(probe, x, 7), ProtocolError);
  CHECK_THROWS_AS(text_alignment(probe, Matrix(2, 0), 1), MetricError);
  const Matrix p = probe.probabilities(x);
  CHECK((p.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("trained probe separates the base classes") {
  std::vector<ConceptSpec> base;
  for (int k = 0; k < 3; ++k) {
    ConceptSpec s = ring(Vec2(3.0 * std::cos(2.0 * k), 3.0 * std::sin(2.0 * k)));
    s.token = TokenId(k + 1);
    base.push_back(s);
  }
  ProbeConfig config;
  config.steps = 400;
  config.samples_per_concept = 300;
  Rng rng(6);
  const ProbeClassifier probe = train_probe(base, config, rng);
  CHECK(probe.frozen());
  for (const auto& c : base) {
    const LatentSet x = sample_concept(c, 300, rng);
    const double own = text_alignment(probe, x, c.token);
    CHECK(own >= 0.9);
    for (const auto& other : base)
      if (other.token != c.token) CHECK(own > text_alignment(probe, x, other.token));
  }
}

TEST_CASE("iad examples") {
  const std::vector<double> own{0.8}, last{0.4};
  CHECK(iad(own, last) == 50.0);
  const std::vector<double> same{0.7, 0.3, 0.9};
  CHECK(iad(same, same) == 0.0);
  CHECK_THROWS_AS(iad(std::vector<double>{}, std::vector<double>{}), ProtocolError);
  CHECK_THROWS_AS(iad(std::vector<double>{0.5}, std::vector<double>{0.5, 0.4}), ProtocolError);
  CHECK_THROWS_AS(iad(std::vector<double>{0.0}, std::vector<double>{0.5}), ProtocolError);
}

TEST_CASE("iad is invariant under a common scaling") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + rng.index(6);
    std::vector<double> own(n), last(n), own_c(n), last_c(n);
    // Power-of-two factors keep the scaled ratios exact.
    const double c = std::ldexp(1.0, rng.index(9) - 4);
    for (int i = 0; i < n; ++i) {
      own[i] = 0.05 + 0.95 * rng.uniform();
      last[i] = 0.05 + 0.95 * rng.uniform();
      own_c[i] = c * own[i];
      last_c[i] = c * last[i];
    }
    CHECK(iad(own_c, last_c) == iad(own, last));
    // Non-power-of-two factors agree to rounding.
    const double c2 = 0.1 + 5.0 * rng.uniform();
    for (int i = 0; i < n; ++i) {
      own_c[i] = c2 * own[i];
      last_c[i] = c2 * last[i];
    }
    CHECK(iad(own_c, last_c) == doctest::Approx(iad(own, last)).epsilon(1e-12));
  }
}

TEST_CASE("forgetting protocol over an IA history") {
  IaHistory history;
  CHECK_THROWS_AS(run_pcf_protocol(history, 1), ProtocolError);
  // Constant history: no drop at any session.
  for (int s = 1; s <= 4; ++s)
    for (int j = 1; j <= s; ++j) history.record(TokenId(10 + j), j, s, 0.5 + 0.1 * j);
  const auto flat = run_pcf_protocol(history, 4);
  REQUIRE(flat.size() == 3);
  for (const auto& p : flat) CHECK(p.iad == 0.0);
  CHECK(flat.front().session == 2);
  CHECK(flat.back().session == 4);

  IaHistory halving;
  halving.record(11, 1, 1, 0.8);
  halving.record(11, 1, 2, 0.4);
  halving.record(12, 2, 2, 0.6);
  CHECK(run_pcf_protocol(halving, 2).front().iad == 50.0);
  CHECK_THROWS_AS(run_pcf_protocol(halving, 3), ProtocolError);
  CHECK_THROWS_AS(halving.at(12, 1), ProtocolError);
  CHECK(halving.concepts_before(2) == std::vector<TokenId>{11});
}
