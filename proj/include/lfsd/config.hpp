#pragma once

#include "lfsd/concepts.hpp"
#include "lfsd/denoiser.hpp"
#include "lfsd/metrics.hpp"
#include "lfsd/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lfsd {

struct ScheduleConfig {
  int T_train = 50;
  // Beta range of a reference_steps-long process; each schedule rescales it
  // to its own length.
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int reference_steps = 1000;
};

struct IcgenConfig {
  double strength = 0.8;
  double guidance = 6.0;   // inference guidance scale for all generation
  int context_size = 0;    // stored latents per session; 0 means K
  bool apply_to_current = true;
};

struct MethodConfig {
  std::string name = "full";
  Distillation distillation = Distillation::data_free;
  bool icgen = true;
  Trajectory trajectory = Trajectory::teacher;
  UpdateMode update = UpdateMode::per_outer;

  // Presets: plain_ft, lwf, dfkd, full, dfkd_student.
  static MethodConfig preset(const std::string& name);
};

struct SessionSpec {
  std::string name;
  std::string base;  // name of the base concept it specializes
  ConceptTransform transform;
  int K = 5;
};

struct EvalConfig {
  int n_samples = 500;
  int reference_samples = 500;
  int scatter_points = 200;
  ProbeConfig probe;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int data_dim = 2;
  DenoiserConfig model;  // vocab_size is derived from the concept lists
  std::vector<ConceptSpec> base_concepts;
  std::vector<SessionSpec> sessions;
  PretrainConfig pretrain;
  TrainConfig train;
  ScheduleConfig schedule;
  IcgenConfig icgen;
  MethodConfig method;
  std::vector<MethodConfig> methods;  // method matrix for `ablate`
  EvalConfig eval;
  int jobs = 1;
};

// Parses and validates. Syntax errors report line and column; semantic
// problems are collected and reported together in one ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical JSON (sorted keys) of the fully-resolved config.
std::string serialize_config(const ExperimentConfig& config);
std::uint64_t config_hash(const ExperimentConfig& config);

ExperimentConfig default_config();

std::string to_string(Distillation d);
std::string to_string(Trajectory t);

// Concepts and tokens resolved from a config.
struct World {
  std::vector<ConceptSpec> base;
  std::vector<ConceptSpec> session_concepts;
  std::vector<SessionConcept> sessions;
  std::vector<TokenId> base_vocab;
  std::vector<int> shots;
  int vocab_size = 0;

  const ConceptSpec& concept_of(TokenId token) const;
  std::string name_of(TokenId token) const;
  bool is_base(TokenId token) const;
};

World build_world(const ExperimentConfig& config);

}  // namespace lfsd
