#pragma once

#include "lfsd/concepts.hpp"
#include "lfsd/denoiser.hpp"
#include "lfsd/rng.hpp"
#include "lfsd/schedule.hpp"
#include "lfsd/trainer.hpp"

#include <map>
#include <span>
#include <vector>

namespace lfsd {

// Energy distance between two empirical distributions (V-statistic form):
//   2 E|x - y| - E|x - x'| - E|y - y'|
// Columns are points. Zero for identical point sets, symmetric, >= 0.
double energy_distance(const LatentSet& x, const LatentSet& y);

// Alignment analog bounded in (0, 1]: 1 / (1 + ED).
double image_alignment(const LatentSet& generated, const LatentSet& reference);

// Upper (1 - alpha) quantile of ED under random relabelling of the pooled
// sample; the null distribution for "same source".
double energy_permutation_threshold(const LatentSet& x, const LatentSet& y, int permutations,
                                    double alpha, Rng& rng);

struct ProbeConfig {
  int hidden = 32;
  int steps = 2000;
  int samples_per_concept = 1000;
  int batch = 256;
  double lr = 1e-2;
};

// Small frozen classifier over the base vocabulary; the analog of a fixed
// pre-trained text-image encoder.
class ProbeClassifier {
 public:
  ProbeClassifier() = default;
  ProbeClassifier(int data_dim, int hidden, std::vector<TokenId> classes);

  // Class probabilities, classes x n.
  Matrix probabilities(const LatentSet& x) const;

  const std::vector<TokenId>& classes() const { return classes_; }
  int class_index(TokenId token) const;  // -1 when not a probe class
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  Matrix w1, w2;
  Vector b1, b2;

 private:
  std::vector<TokenId> classes_;
  bool frozen_ = false;
};

ProbeClassifier train_probe(std::span<const ConceptSpec> base_concepts, const ProbeConfig& config,
                            Rng& rng);

// Mean probe probability of `token`'s class over generated samples.
double text_alignment(const ProbeClassifier& probe, const LatentSet& generated, TokenId token);

// Mean percent drop of alignment from each concept's own session to the
// final session: (1/(n-1)) sum (IA_i - IA_n,i) / IA_i * 100.
double iad(std::span<const double> ia_own_session, std::span<const double> ia_final_session);

struct RcfRow {
  TokenId token;
  double ta;
};

struct RcfReport {
  std::vector<RcfRow> rows;
  double mean_ta = 0.0;
};

RcfReport run_rcf_protocol(const Denoiser& model, const ProbeClassifier& probe,
                           std::span<const ConceptSpec> base_concepts, int n_samples,
                           const Schedule& sched, double g, Rng& rng);

// IA of each session concept measured at each later session.
class IaHistory {
 public:
  void record(TokenId concept_token, int concept_session, int measured_session, double ia);
  // Throws ProtocolError when absent.
  double at(TokenId concept_token, int measured_session) const;
  int session_of(TokenId concept_token) const;
  std::vector<TokenId> concepts_before(int session) const;  // concepts learned in sessions < session

 private:
  std::map<TokenId, int> concept_session_;
  std::map<std::pair<TokenId, int>, double> values_;
};

struct IadPoint {
  int session;
  double iad;
};

// IAD for sessions 2..last_session.
std::vector<IadPoint> run_pcf_protocol(const IaHistory& history, int last_session);

}  // namespace lfsd
