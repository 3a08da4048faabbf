#pragma once

#include "lfsd/concepts.hpp"
#include "lfsd/denoiser.hpp"
#include "lfsd/icgen.hpp"
#include "lfsd/optimizer.hpp"
#include "lfsd/rng.hpp"
#include "lfsd/schedule.hpp"

#include <functional>
#include <vector>

namespace lfsd {

// What regularizes a session's fine-tuning.
enum class Distillation {
  none,       // plain sequential fine-tuning
  data_free,  // teacher-driven reverse rollouts from noise, no stored data
  lwf,        // teacher outputs on the current session's noised samples only
};

// Which latents the data-free distillation matches.
enum class Trajectory {
  teacher,  // both models see the teacher latent, match noise predictions
  student,  // each model follows its own rollout, match the next latents
};

// One optimizer update per distillation step, or one per outer step with
// the distillation terms averaged.
enum class UpdateMode { per_tau, per_outer };

struct TrainConfig {
  int steps = 1000;
  double lr = 1e-3;
  double lambda = 1.0;
  int T_tau = 25;
  double cond_dropout = 0.1;
  int batch = 1;
  std::uint64_t seed = 0;
  Distillation distillation = Distillation::data_free;
  Trajectory trajectory = Trajectory::teacher;
  UpdateMode update = UpdateMode::per_outer;

  void validate() const;
};

struct PretrainConfig {
  int steps = 5000;
  int samples_per_concept = 2000;
  int batch = 256;
  double lr = 2e-3;
  double cond_dropout = 0.1;

  void validate() const;
};

struct LossRecord {
  long step;
  double l_dm;
  double l_kd;
  double l_train;
};

using LossTrace = std::vector<LossRecord>;

struct AlignmentRecord {
  TokenId token;
  int session;
  double ia;
  double ta;  // NaN when not measured (non-base tokens)
  int n_generated;
  int n_reference;
};

struct SessionState {
  int session_index = 0;  // number of completed sessions
  Denoiser model;
  ContextBank context_bank;
  std::vector<AlignmentRecord> ia_history;
};

// Stand-in for a large pre-trained backbone: conditional DDPM training on
// plentiful samples of the base concepts.
Denoiser pretrain_base(const PretrainConfig& config, const DenoiserConfig& model_config,
                       std::span<const ConceptSpec> base_concepts, const Schedule& sched, Rng& rng,
                       LossTrace* trace = nullptr);

// Counters exposed for instrumentation tests.
struct SessionCounters {
  long teacher_predictions = 0;
  long student_predictions = 0;
  long optimizer_steps = 0;
};

// One lifelong session: few-shot fine-tuning of state.model on `fewshot`
// with the configured distillation, followed by vision-context capture.
// The incoming model is the frozen teacher.
SessionState train_session(const SessionState& state, const FewShotDataset& fewshot,
                           const PromptSets& prompts, const TrainConfig& config,
                           const Schedule& train_sched, const Schedule& distill_sched, Rng& rng,
                           int context_size = 0, LossTrace* trace = nullptr,
                           SessionCounters* counters = nullptr);

// Stores m few-shot latents (m = 0 means all K) as the session's context.
ContextBank::Entry capture_vision_context(const FewShotDataset& fewshot, int m, Rng& rng);

}  // namespace lfsd
