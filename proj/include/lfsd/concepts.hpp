#pragma once

#include "lfsd/rng.hpp"
#include "lfsd/types.hpp"

#include <set>
#include <span>
#include <string>
#include <vector>

namespace lfsd {

enum class Family { ring, two_moons, spiral, blobs, grid };

Family parse_family(const std::string& name);
std::string to_string(Family family);

// Generative recipe for one synthetic concept:
//   x = center + R(rotation) * scale * shape(u) + noise_std * n
// where shape(u) is the noiseless family manifold. For blobs the shape is a
// single point and the spread is scale * noise_std.
struct ConceptSpec {
  std::string name;
  TokenId token = 0;
  Family family = Family::ring;
  Vec2 center = Vec2::Zero();
  double scale = 1.0;
  double rotation = 0.0;
  double noise_std = 0.0;
  int data_dim = 2;

  void validate() const;
  bool operator==(const ConceptSpec&) const = default;
};

struct ConceptTransform {
  Vec2 shift = Vec2::Zero();
  double scale_mul = 1.0;
  double rot_add = 0.0;
};

// n i.i.d. samples, one per column. Dimensions beyond the first two carry
// isotropic noise_std noise.
LatentSet sample_concept(const ConceptSpec& spec, int n, Rng& rng);

// Noiseless-manifold membership test used by tests and diagnostics.
double manifold_distance(const ConceptSpec& spec, const Latent& x);

ConceptSpec derive_session_concept(const ConceptSpec& base, const ConceptTransform& transform,
                                   TokenId new_token, const std::set<TokenId>& used_tokens,
                                   std::string name = {});

inline constexpr int kMaxShots = 10;

struct FewShotDataset {
  ConceptSpec spec;
  LatentSet samples;
  int K = 0;
};

FewShotDataset make_fewshot(const ConceptSpec& spec, int K, Rng& rng);

// A session concept and the base concept it specializes.
struct SessionConcept {
  TokenId token;
  TokenId base_token;
};

struct PromptSets {
  std::vector<TokenId> session_prompts;         // tokens of the current session
  std::vector<TokenId> regularization_prompts;  // distillation pool (base vocabulary)
  std::vector<TokenId> test_prompts;            // sessions 1..i plus their base tokens
};

// `sessions` lists all sessions in order; session_index is 1-based.
PromptSets build_prompt_sets(int session_index, std::span<const TokenId> base_vocab,
                             std::span<const SessionConcept> sessions);

}  // namespace lfsd
