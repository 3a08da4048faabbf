#include "lfsd/metrics.hpp"

#include "lfsd/optimizer.hpp"
#include "lfsd/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lfsd {

namespace {

double mean_pairwise_distance(const LatentSet& a, const LatentSet& b) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < b.cols(); ++j) total += (a.colwise() - b.col(j)).colwise().norm().sum();
  return total / (double(a.cols()) * double(b.cols()));
}

}  // namespace

double energy_distance(const LatentSet& x, const LatentSet& y) {
  if (x.cols() == 0 || y.cols() == 0) throw MetricError("energy_distance: empty sample set");
  if (x.rows() != y.rows()) throw MetricError("energy_distance: dimension mismatch");
  const double cross = mean_pairwise_distance(x, y);
  const double within_x = mean_pairwise_distance(x, x);
  const double within_y = mean_pairwise_distance(y, y);
  return std::max(0.0, 2.0 * cross - within_x - within_y);
}

double image_alignment(const LatentSet& generated, const LatentSet& reference) {
  return 1.0 / (1.0 + energy_distance(generated, reference));
}

double energy_permutation_threshold(const LatentSet& x, const LatentSet& y, int permutations,
                                    double alpha, Rng& rng) {
  const Eigen::Index nx = x.cols();
  const Eigen::Index n = nx + y.cols();
  LatentSet pooled(x.rows(), n);
  pooled << x, y;
  // Pairwise distances once; each permutation only reindexes.
  Matrix dist(n, n);
  for (Eigen::Index j = 0; j < n; ++j) dist.col(j) = (pooled.colwise() - pooled.col(j)).colwise().norm().transpose();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> stats;
  stats.reserve(permutations);
  std::vector<char> in_x(n);
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::fill(in_x.begin(), in_x.end(), 0);
    for (Eigen::Index i = 0; i < nx; ++i) in_x[order[i]] = 1;
    double sxx = 0, syy = 0, sxy = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = dist(i, j);
        if (in_x[i] && in_x[j]) sxx += v;
        else if (!in_x[i] && !in_x[j]) syy += v;
        else sxy += v;
      }
    const double ny = double(n - nx);
    stats.push_back(2.0 * (sxy / 2.0) / (double(nx) * ny) - sxx / (double(nx) * double(nx)) -
                    syy / (ny * ny));
  }
  std::sort(stats.begin(), stats.end());
  const auto k = std::min<std::size_t>(stats.size() - 1, std::size_t(std::ceil((1.0 - alpha) * stats.size())) - 1);
  return stats[k];
}

ProbeClassifier::ProbeClassifier(int data_dim, int hidden, std::vector<TokenId> classes)
    : w1(Matrix::Zero(hidden, data_dim)),
      w2(Matrix::Zero(Eigen::Index(classes.size()), hidden)),
      b1(Vector::Zero(hidden)),
      b2(Vector::Zero(Eigen::Index(classes.size()))),
      classes_(std::move(classes)) {}

Matrix ProbeClassifier::probabilities(const LatentSet& x) const {
  Matrix h = w1 * x;
  h.colwise() += b1;
  h = h.array().tanh().matrix();
  Matrix logits = w2 * h;
  logits.colwise() += b2;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    auto col = logits.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return logits;
}

int ProbeClassifier::class_index(TokenId token) const {
  auto it = std::find(classes_.begin(), classes_.end(), token);
  return it == classes_.end() ? -1 : int(it - classes_.begin());
}

ProbeClassifier train_probe(std::span<const ConceptSpec> base_concepts, const ProbeConfig& config,
                            Rng& rng) {
  if (base_concepts.empty()) throw ConfigError("probe needs at least one base concept");
  const int data_dim = base_concepts.front().data_dim;
  std::vector<TokenId> classes;
  for (const auto& c : base_concepts) classes.push_back(c.token);
  ProbeClassifier probe(data_dim, config.hidden, classes);

  const int per = config.samples_per_concept;
  const int k = int(base_concepts.size());
  Matrix data(data_dim, Eigen::Index(per) * k);
  std::vector<int> labels;
  for (int c = 0; c < k; ++c) {
    data.middleCols(Eigen::Index(c) * per, per) = sample_concept(base_concepts[c], per, rng);
    labels.insert(labels.end(), per, c);
  }

  for (Eigen::Index j = 0; j < probe.w1.cols(); ++j)
    for (Eigen::Index i = 0; i < probe.w1.rows(); ++i) probe.w1(i, j) = rng.normal() / std::sqrt(double(data_dim));
  for (Eigen::Index j = 0; j < probe.w2.cols(); ++j)
    for (Eigen::Index i = 0; i < probe.w2.rows(); ++i) probe.w2(i, j) = rng.normal() / std::sqrt(double(config.hidden));

  // Flat parameter view for the optimizer: w1, b1, w2, b2.
  const Eigen::Index n1 = probe.w1.size(), n2 = probe.b1.size(), n3 = probe.w2.size(), n4 = probe.b2.size();
  Vector params(n1 + n2 + n3 + n4);
  auto pack = [&] {
    params << probe.w1.reshaped(), probe.b1, probe.w2.reshaped(), probe.b2;
  };
  auto unpack = [&] {
    probe.w1.reshaped() = params.segment(0, n1);
    probe.b1 = params.segment(n1, n2);
    probe.w2.reshaped() = params.segment(n1 + n2, n3);
    probe.b2 = params.segment(n1 + n2 + n3, n4);
  };
  pack();
  AdamState<double> adam(params.size());
  const int B = config.batch;
  for (int step = 0; step < config.steps; ++step) {
    Matrix x(data_dim, B);
    Matrix onehot = Matrix::Zero(k, B);
    for (int b = 0; b < B; ++b) {
      const int i = rng.index(int(data.cols()));
      x.col(b) = data.col(i);
      onehot(labels[i], b) = 1.0;
    }
    Matrix a = probe.w1 * x;
    a.colwise() += probe.b1;
    const Matrix h = a.array().tanh().matrix();
    const Matrix p = probe.probabilities(x);
    const Matrix d_logits = (p - onehot) / double(B);
    const Matrix d_h = probe.w2.transpose() * d_logits;
    const Matrix d_a = d_h.cwiseProduct((1.0 - h.array().square()).matrix());
    Vector grad(params.size());
    grad << (d_a * x.transpose()).reshaped(), d_a.rowwise().sum(),
        (d_logits * h.transpose()).reshaped(), d_logits.rowwise().sum();
    optimizer_step(params, grad, adam, config.lr);
    unpack();
  }
  probe.freeze();
  return probe;
}

double text_alignment(const ProbeClassifier& probe, const LatentSet& generated, TokenId token) {
  const int c = probe.class_index(token);
  if (c < 0)
    throw ProtocolError("text alignment is defined for base tokens only, got token " +
                        std::to_string(token));
  if (generated.cols() == 0) throw MetricError("text_alignment: empty sample set");
  return probe.probabilities(generated).row(c).mean();
}

double iad(std::span<const double> ia_own_session, std::span<const double> ia_final_session) {
  if (ia_own_session.size() != ia_final_session.size())
    throw ProtocolError("iad: alignment record counts differ");
  if (ia_own_session.empty()) throw ProtocolError("iad needs at least two sessions");
  double total = 0.0;
  for (std::size_t i = 0; i < ia_own_session.size(); ++i) {
    if (!(ia_own_session[i] > 0.0)) throw ProtocolError("iad: alignment values must be > 0");
    total += (ia_own_session[i] - ia_final_session[i]) / ia_own_session[i] * 100.0;
  }
  return total / double(ia_own_session.size());
}

RcfReport run_rcf_protocol(const Denoiser& model, const ProbeClassifier& probe,
                           std::span<const ConceptSpec> base_concepts, int n_samples,
                           const Schedule& sched, double g, Rng& rng) {
  RcfReport report;
  for (const auto& concept_spec : base_concepts) {
    const LatentSet gen = sample(model, concept_spec.token, sched, g, rng, n_samples);
    report.rows.push_back({concept_spec.token, text_alignment(probe, gen, concept_spec.token)});
  }
  double total = 0.0;
  for (const auto& row : report.rows) total += row.ta;
  report.mean_ta = report.rows.empty() ? 0.0 : total / double(report.rows.size());
  return report;
}

void IaHistory::record(TokenId concept_token, int concept_session, int measured_session, double ia) {
  concept_session_[concept_token] = concept_session;
  values_[{concept_token, measured_session}] = ia;
}

double IaHistory::at(TokenId concept_token, int measured_session) const {
  auto it = values_.find({concept_token, measured_session});
  if (it == values_.end())
    throw ProtocolError("no IA record for token " + std::to_string(concept_token) +
                        " at session " + std::to_string(measured_session));
  return it->second;
}

int IaHistory::session_of(TokenId concept_token) const {
  auto it = concept_session_.find(concept_token);
  if (it == concept_session_.end())
    throw ProtocolError("token " + std::to_string(concept_token) + " has no IA history");
  return it->second;
}

std::vector<TokenId> IaHistory::concepts_before(int session) const {
  std::vector<std::pair<int, TokenId>> ordered;
  for (const auto& [token, s] : concept_session_)
    if (s < session) ordered.emplace_back(s, token);
  std::sort(ordered.begin(), ordered.end());
  std::vector<TokenId> out;
  for (const auto& [s, token] : ordered) out.push_back(token);
  return out;
}

std::vector<IadPoint> run_pcf_protocol(const IaHistory& history, int last_session) {
  if (last_session < 2) throw ProtocolError("IAD needs at least two sessions");
  std::vector<IadPoint> out;
  for (int n = 2; n <= last_session; ++n) {
    const auto concepts = history.concepts_before(n);
    if (int(concepts.size()) != n - 1)
      throw ProtocolError("IA history is missing concepts before session " + std::to_string(n));
    std::vector<double> own, final_;
    for (TokenId token : concepts) {
      own.push_back(history.at(token, history.session_of(token)));
      final_.push_back(history.at(token, n));
    }
    out.push_back({n, iad(own, final_)});
  }
  return out;
}

}  // namespace lfsd
