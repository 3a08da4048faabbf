#include "lfsd/icgen.hpp"

#include "lfsd/sampler.hpp"

#include <cmath>

namespace lfsd {

void ContextBank::add(int session, TokenId token, LatentSet latents) {
  if (latents.cols() == 0) throw ConfigError("context bank entries must be nonempty");
  if (entries_.count(session))
    throw ConfigError("context bank already holds session " + std::to_string(session));
  if (contains(token))
    throw ConfigError("context bank already holds token " + std::to_string(token));
  entries_.emplace(session, Entry{token, std::move(latents)});
}

const ContextBank::Entry* ContextBank::find(TokenId token) const {
  for (const auto& [session, entry] : entries_)
    if (entry.token == token) return &entry;
  return nullptr;
}

bool ContextBank::operator==(const ContextBank& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (auto a = entries_.begin(), b = other.entries_.begin(); a != entries_.end(); ++a, ++b) {
    const Entry& x = a->second;
    const Entry& y = b->second;
    if (a->first != b->first || x.token != y.token || x.latents.rows() != y.latents.rows() ||
        x.latents.cols() != y.latents.cols() || x.latents != y.latents)
      return false;
  }
  return true;
}

ContextBank ContextBank::up_to(int session) const {
  ContextBank out;
  for (const auto& [s, entry] : entries_)
    if (s <= session) out.entries_.emplace(s, entry);
  return out;
}

Latent lookup_context(const ContextBank& bank, TokenId token, Rng& rng) {
  const auto* entry = bank.find(token);
  if (entry == nullptr)
    throw MissingContextError("no vision context stored for token " + std::to_string(token));
  return entry->latents.col(rng.index(int(entry->latents.cols())));
}

int icgen_steps(int T, double strength) {
  if (!(strength >= 0.0 && strength <= 1.0))
    throw ConfigError("icgen strength must lie in [0, 1]");
  return int(std::floor(double(T) * strength + 0.5));
}

LatentSet icgen_generate(const Denoiser& model, const ContextBank& bank, TokenId token,
                         double strength, const Schedule& sched, double g, Rng& rng, int n,
                         const IcgenOptions& options, IcgenStats* stats) {
  const int steps = icgen_steps(sched.steps, strength);
  const int d = model.config().data_dim;
  if (stats) *stats = IcgenStats{};
  if (n <= 0) return LatentSet(d, 0);

  if (!bank.contains(token)) {
    if (!options.fallback_to_noise)
      throw MissingContextError("no vision context stored for token " + std::to_string(token));
    if (stats) *stats = IcgenStats{sched.steps, true};
    return sample(model, token, sched, g, rng, n);
  }

  LatentSet context(d, n);
  for (int j = 0; j < n; ++j) context.col(j) = lookup_context(bank, token, rng);
  if (stats) stats->reverse_steps = steps;
  if (steps == 0) return context;

  const Matrix eps = rng.normal(d, n);
  Matrix z = forward_noise(context, steps - 1, eps, sched);
  return reverse_diffusion(model, std::move(z), steps, token, sched, g, rng);
}

ComposedContext compose_contexts(const ContextBank& bank, const Layout& layout, Rng& rng) {
  if (layout.placements.empty()) throw ConfigError("layout needs at least one placement");
  ComposedContext out;
  const auto* first = bank.find(layout.placements.front().token);
  const Eigen::Index d = first ? first->latents.rows() : 2;
  out.latents.resize(d, Eigen::Index(layout.placements.size()));
  for (std::size_t i = 0; i < layout.placements.size(); ++i) {
    const auto& p = layout.placements[i];
    if (!(p.scale_mul > 0.0)) throw ConfigError("placement scale_mul must be > 0");
    Latent v = lookup_context(bank, p.token, rng);
    v *= p.scale_mul;
    v.head<2>() += p.shift;
    out.latents.col(Eigen::Index(i)) = v;
    out.tokens.push_back(p.token);
  }
  return out;
}

LatentSet icgen_generate_composed(const Denoiser& model, const ComposedContext& context,
                                  double strength, const Schedule& sched, double g, Rng& rng) {
  const int steps = icgen_steps(sched.steps, strength);
  if (steps == 0 || context.latents.cols() == 0) return context.latents;
  const Matrix eps = rng.normal(context.latents.rows(), context.latents.cols());
  Matrix z = forward_noise(context.latents, steps - 1, eps, sched);
  return reverse_diffusion(model, std::move(z), steps, std::span<const TokenId>(context.tokens),
                           sched, g, rng);
}

}  // namespace lfsd
