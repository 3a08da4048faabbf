#pragma once

#include "lfsd/checkpoint.hpp"
#include "lfsd/config.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lfsd {

// Pretrained backbone, frozen probe and fixed reference sets for one seed.
// Shared by every method run with that seed.
struct BaseArtifacts {
  std::uint64_t seed = 0;
  Denoiser model;
  ProbeClassifier probe;
  std::map<TokenId, LatentSet> references;  // true-concept samples per token
  LossTrace trace;
};

BaseArtifacts prepare_base(const ExperimentConfig& config, const World& world, std::uint64_t seed);

// Only the seed's reference sets; model and probe left empty.
BaseArtifacts prepare_base_references(const ExperimentConfig& config, const World& world,
                                      std::uint64_t seed);

// prepare_base with an on-disk cache under out_root/pretrain-seed<seed>/.
BaseArtifacts load_or_prepare_base(const ExperimentConfig& config, const World& world,
                                   std::uint64_t seed, const std::filesystem::path& out_root);

// Schedules resolved from the config.
struct Schedules {
  Schedule train;
  Schedule distill;
};

Schedules make_schedules(const ExperimentConfig& config);

struct MetricRow {
  std::string run_id;
  std::uint64_t seed;
  int session;
  std::string token;  // concept name, or "ALL" for the session aggregate
  std::string method;
  double ia;
  double ta;   // NaN when not defined
  double iad;  // NaN when not defined
  int n_samples;
};

std::string metrics_csv_header();
std::string format_metric_row(const MetricRow& row);

// Generates samples for `token` the way `method` does at inference.
LatentSet generate_for_token(const Denoiser& model, const ContextBank& bank, TokenId token,
                             bool use_icgen, const ExperimentConfig& config, const Schedule& sched,
                             Rng& rng, int n);

struct SessionEval {
  std::vector<MetricRow> rows;
  std::map<TokenId, double> ia;  // session concepts learned so far
  std::map<TokenId, LatentSet> scatter;
};

// Evaluates the model after `session`; `history` holds IA records of
// earlier sessions and receives this session's.
SessionEval evaluate_session(const ExperimentConfig& config, const World& world,
                             const MethodConfig& method, std::uint64_t seed,
                             const std::string& run_id, int session, const Denoiser& model,
                             const ContextBank& bank, const BaseArtifacts& base,
                             IaHistory& history);

// Session-boundary hooks for instrumentation.
class SessionObserver {
 public:
  virtual ~SessionObserver() = default;
  virtual void on_session_start(int /*session*/, const FewShotDataset& /*data*/,
                                const SessionState& /*incoming*/) {}
  virtual void on_session_end(int /*session*/, const SessionState& /*outgoing*/) {}
};

struct RunManifest {
  std::string run_id;
  std::string method;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::filesystem::path run_dir;
  std::filesystem::path config_path;
  std::vector<std::filesystem::path> checkpoints;  // one per session
  std::filesystem::path bank_path;
  std::filesystem::path probe_path;
  std::filesystem::path metrics_path;
  std::filesystem::path loss_trace_path;
  std::filesystem::path scatter_path;
  std::map<std::string, double> timings;  // seconds
  std::string status = "ok";
  std::string failure;
};

std::string run_id_for(const MethodConfig& method, std::uint64_t seed);

// pretrain -> sessions 1..n -> evaluation after every session. Each
// session sees only its own few-shot dataset; earlier sessions reach it
// through the model and the context bank alone.
RunManifest run_experiment(const ExperimentConfig& config, const MethodConfig& method,
                           std::uint64_t seed, const std::filesystem::path& out_root,
                           const BaseArtifacts& base, SessionObserver* observer = nullptr);

// Reloads checkpoints of a finished run and recomputes its metrics.
std::vector<MetricRow> evaluate_run(const ExperimentConfig& config, const RunManifest& manifest,
                                    const BaseArtifacts& base);

void write_manifest(const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& path);

// Method x seed matrix, `jobs` worker threads. Manifests come back in
// (method, seed) order regardless of scheduling.
std::vector<RunManifest> run_matrix(const ExperimentConfig& config,
                                    const std::vector<MethodConfig>& methods,
                                    const std::vector<std::uint64_t>& seeds,
                                    const std::filesystem::path& out_root, int jobs);

// Merged comparison tables and plot data under out_dir.
void emit_report(const std::vector<RunManifest>& manifests, const std::filesystem::path& out_dir);

std::vector<MetricRow> read_metrics(const std::filesystem::path& path);

}  // namespace lfsd
