#pragma once

#include "lfsd/denoiser.hpp"
#include "lfsd/rng.hpp"
#include "lfsd/schedule.hpp"

#include <map>
#include <optional>
#include <vector>

namespace lfsd {

// Stored vision contexts, one entry per completed session.
class ContextBank {
 public:
  struct Entry {
    TokenId token;
    LatentSet latents;  // one stored latent per column
  };

  void add(int session, TokenId token, LatentSet latents);

  const Entry* find(TokenId token) const;
  bool contains(TokenId token) const { return find(token) != nullptr; }
  std::size_t size() const { return entries_.size(); }
  const std::map<int, Entry>& entries() const { return entries_; }

  // Entries of sessions <= session.
  ContextBank up_to(int session) const;

  bool operator==(const ContextBank& other) const;

 private:
  std::map<int, Entry> entries_;
};

Latent lookup_context(const ContextBank& bank, TokenId token, Rng& rng);

// Number of reverse steps ICGen runs: round-half-up of T * s.
int icgen_steps(int T, double strength);

struct IcgenOptions {
  // Tokens without a stored context fall back to plain sampling.
  bool fallback_to_noise = true;
};

struct IcgenStats {
  int reverse_steps = 0;
  bool fell_back = false;
};

// In-context generation: noise a stored context to step T' - 1, then run
// T' guided reverse steps conditioned on `token`.
LatentSet icgen_generate(const Denoiser& model, const ContextBank& bank, TokenId token,
                         double strength, const Schedule& sched, double g, Rng& rng, int n,
                         const IcgenOptions& options = {}, IcgenStats* stats = nullptr);

struct Placement {
  TokenId token;
  Vec2 shift = Vec2::Zero();
  double scale_mul = 1.0;
};

struct Layout {
  std::vector<Placement> placements;
};

// A multi-concept context: transformed context latents, each tagged with the
// token that conditions its denoising.
struct ComposedContext {
  LatentSet latents;
  std::vector<TokenId> tokens;
};

ComposedContext compose_contexts(const ContextBank& bank, const Layout& layout, Rng& rng);

// ICGen denoising of a composed context, each element under its own token.
LatentSet icgen_generate_composed(const Denoiser& model, const ComposedContext& context,
                                  double strength, const Schedule& sched, double g, Rng& rng);

}  // namespace lfsd
