// Command-line harness: pretrain, run, eval, report, ablate.
//
// Exit codes: 0 success, 1 config/usage error, 2 training failure,
// 3 evaluation or protocol error.

#include "lfsd/experiment.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace lfsd;

namespace {

enum Exit { kOk = 0, kConfig = 1, kTraining = 2, kProtocol = 3 };

struct Common {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out = "runs";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "experiment config (JSON); defaults when omitted");
  cmd->add_option("--seed", c.seeds, "seed(s); overrides the config's seed list");
  cmd->add_option("--out", c.out, "runs root directory")->capture_default_str();
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig config = c.config_path.empty() ? default_config() : load_config(c.config_path);
  if (!c.seeds.empty()) config.seeds = c.seeds;
  return config;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int status_of(const std::vector<RunManifest>& manifests) {
  int code = kOk;
  for (const auto& m : manifests) {
    if (m.status == "ok") continue;
    std::cerr << m.run_id << ": training failed: " << m.failure << "\n";
    code = kTraining;
  }
  return code;
}

int cmd_pretrain(const Common& c) {
  const ExperimentConfig config = resolve(c);
  const World world = build_world(config);
  for (auto seed : config.seeds) {
    const BaseArtifacts base = load_or_prepare_base(config, world, seed, c.out);
    std::cout << "pretrain seed " << seed << ": " << base.model.parameter_count()
              << " parameters -> " << (fs::path(c.out) / ("pretrain-seed" + std::to_string(seed))).string()
              << "\n";
  }
  return kOk;
}

int cmd_run(const Common& c, const std::string& method_name) {
  ExperimentConfig config = resolve(c);
  if (!method_name.empty()) config.method = MethodConfig::preset(method_name);
  const World world = build_world(config);
  std::vector<RunManifest> manifests;
  for (auto seed : config.seeds) {
    const BaseArtifacts base = load_or_prepare_base(config, world, seed, c.out);
    manifests.push_back(run_experiment(config, config.method, seed, c.out, base));
    const auto& m = manifests.back();
    std::cout << m.run_id << ": " << m.status << " (" << m.timings.at("total") << " s) -> "
              << m.metrics_path.string() << "\n";
  }
  return status_of(manifests);
}

int cmd_eval(const Common& c, const std::string& method_name) {
  ExperimentConfig config = resolve(c);
  if (!method_name.empty()) config.method = MethodConfig::preset(method_name);
  const World world = build_world(config);
  int code = kOk;
  for (auto seed : config.seeds) {
    const fs::path manifest_path = fs::path(c.out) / run_id_for(config.method, seed) / "manifest.json";
    if (!fs::exists(manifest_path)) throw ProtocolError("no run manifest at '" + manifest_path.string() + "'");
    const RunManifest manifest = read_manifest(manifest_path);
    const BaseArtifacts base = load_or_prepare_base(config, world, seed, c.out);
    const auto rows = evaluate_run(config, manifest, base);
    std::string csv = metrics_csv_header() + "\n";
    for (const auto& r : rows) csv += format_metric_row(r) + "\n";
    const fs::path out = manifest.run_dir / "eval_metrics.csv";
    std::ofstream(out, std::ios::binary) << csv;
    const bool same = csv == slurp(manifest.metrics_path);
    std::cout << manifest.run_id << ": " << out.string()
              << (same ? " (matches metrics.csv)" : " (DIFFERS from metrics.csv)") << "\n";
    if (!same) code = kProtocol;
  }
  return code;
}

int cmd_report(const Common& c) {
  std::vector<RunManifest> manifests;
  if (fs::is_directory(c.out)) {
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(c.out))
      if (fs::exists(entry.path() / "manifest.json")) paths.push_back(entry.path() / "manifest.json");
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) manifests.push_back(read_manifest(p));
  }
  if (manifests.empty()) {
    std::cerr << "usage error: no run manifests under '" << c.out << "'\n";
    return kConfig;
  }
  const fs::path dir = fs::path(c.out) / "report";
  emit_report(manifests, dir);
  std::cout << "report for " << manifests.size() << " runs -> " << dir.string() << "\n";
  return kOk;
}

int cmd_ablate(const Common& c, int jobs) {
  const ExperimentConfig config = resolve(c);
  const int workers = jobs > 0 ? jobs : config.jobs;
  const auto manifests = run_matrix(config, config.methods, config.seeds, c.out, workers);
  for (const auto& m : manifests)
    std::cout << m.run_id << ": " << m.status << " (" << m.timings.at("total") << " s)\n";
  emit_report(manifests, fs::path(c.out) / "report");
  std::cout << "report -> " << (fs::path(c.out) / "report").string() << "\n";
  return status_of(manifests);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lifelong few-shot diffusion harness"};
  app.require_subcommand(1);
  Common common;
  std::string method;
  int jobs = 0;

  auto* pretrain = app.add_subcommand("pretrain", "pretrain base model and probe per seed");
  auto* run = app.add_subcommand("run", "run all sessions for one method");
  auto* eval = app.add_subcommand("eval", "re-evaluate a finished run from its checkpoints");
  auto* report = app.add_subcommand("report", "merge finished runs into report files");
  auto* ablate = app.add_subcommand("ablate", "run the method x seed matrix and report");
  for (auto* cmd : {pretrain, run, eval, report, ablate}) add_common(cmd, common);
  for (auto* cmd : {run, eval})
    cmd->add_option("--method", method, "method preset (plain_ft, lwf, dfkd, full, dfkd_student)");
  ablate->add_option("--jobs", jobs, "worker threads (default: config jobs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*pretrain) return cmd_pretrain(common);
    if (*run) return cmd_run(common, method);
    if (*eval) return cmd_eval(common, method);
    if (*report) return cmd_report(common);
    if (*ablate) return cmd_ablate(common, jobs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const TrainingError& e) {
    std::cerr << "training failure: " << e.what() << "\n";
    return kTraining;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return kProtocol;
  } catch (const MetricError& e) {
    std::cerr << "evaluation error: " << e.what() << "\n";
    return kProtocol;
  } catch (const FormatError& e) {
    std::cerr << "evaluation error: " << e.what() << "\n";
    return kProtocol;
  } catch (const MissingContextError& e) {
    std::cerr << "evaluation error: " << e.what() << "\n";
    return kProtocol;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kConfig;
}
