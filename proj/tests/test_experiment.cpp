#include "doctest.h"

#include "lfsd/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace lfsd;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c = default_config();
  c.seeds = {0};
  c.model.hidden_dims = {16, 16};
  c.model.time_embed_dim = 8;
  c.model.cond_embed_dim = 4;
  c.pretrain.steps = 150;
  c.pretrain.batch = 64;
  c.pretrain.samples_per_concept = 200;
  c.train.steps = 6;
  c.train.batch = 2;
  c.schedule.T_train = 25;
  c.icgen.guidance = 2.0;
  c.eval.n_samples = 40;
  c.eval.reference_samples = 40;
  c.eval.scatter_points = 10;
  c.eval.probe.steps = 50;
  c.eval.probe.samples_per_concept = 100;
  c.sessions.resize(3);
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "lfsd_experiment_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Shared pretrained artifacts; pretraining dominates the cost of these tests.
const BaseArtifacts& base_for(std::uint64_t seed) {
  static std::map<std::uint64_t, BaseArtifacts> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) {
    const ExperimentConfig c = tiny_config();
    it = cache.emplace(seed, prepare_base(c, build_world(c), seed)).first;
  }
  return it->second;
}

}  // namespace

TEST_CASE("a run writes every artifact its manifest names") {
  const ExperimentConfig c = tiny_config();
  const fs::path out = fresh_dir("structure");
  const RunManifest m = run_experiment(c, MethodConfig::preset("full"), 0, out, base_for(0));
  CHECK(m.status == "ok");
  CHECK(m.run_id == "full-seed0");
  REQUIRE(m.checkpoints.size() == 3);
  for (const auto& p : m.checkpoints) CHECK(fs::exists(p));
  for (const auto& p : {m.bank_path, m.probe_path, m.metrics_path, m.loss_trace_path, m.scatter_path, m.config_path})
    CHECK(fs::exists(p));
  CHECK(fs::exists(m.run_dir / "manifest.json"));
  CHECK(load_bank(m.bank_path).size() == 3);
  CHECK(m.config_hash.size() == 16);

  // Rows: session 0 has the base tokens; session i adds its i session tokens.
  const auto rows = read_metrics(m.metrics_path);
  const int base = 5;
  int expected = 0;
  for (int i = 0; i <= 3; ++i) expected += i + base + 1;
  CHECK(int(rows.size()) == expected);
  for (int i = 1; i <= 3; ++i) {
    std::set<std::string> tokens;
    for (const auto& r : rows)
      if (r.session == i) tokens.insert(r.token);
    for (int j = 0; j < i; ++j) CHECK(tokens.count(c.sessions[j].name) == 1);
    for (const auto& b : c.base_concepts) CHECK(tokens.count(b.name) == 1);
    CHECK(tokens.count("ALL") == 1);
  }
  for (const auto& r : rows) {
    // Session 0 has no session concepts to average over.
    if (r.token == "ALL" && r.session == 0) {
      CHECK(std::isnan(r.ia));
      continue;
    }
    CHECK(r.ia > 0.0);
    CHECK(r.ia <= 1.0);
    if (!std::isnan(r.ta)) {
      CHECK(r.ta >= 0.0);
      CHECK(r.ta <= 1.0);
    }
  }

  const RunManifest back = read_manifest(m.run_dir / "manifest.json");
  CHECK(back.run_id == m.run_id);
  CHECK(back.checkpoints == m.checkpoints);
  CHECK(back.config_hash == m.config_hash);
  CHECK(slurp(m.config_path) == serialize_config(parse_config(slurp(m.config_path))) + "\n");
}

TEST_CASE("metrics are byte-identical across repeated runs") {
  const ExperimentConfig c = tiny_config();
  const fs::path a = fresh_dir("repeat-a"), b = fresh_dir("repeat-b");
  const auto ma = run_experiment(c, MethodConfig::preset("dfkd"), 0, a, base_for(0));
  // Second run pretrains from scratch as well.
  const auto mb = run_experiment(c, MethodConfig::preset("dfkd"), 0, b, prepare_base(c, build_world(c), 0));
  CHECK(slurp(ma.metrics_path) == slurp(mb.metrics_path));
  CHECK(slurp(ma.loss_trace_path) == slurp(mb.loss_trace_path));
}

TEST_CASE("metrics do not depend on the worker count") {
  ExperimentConfig c = tiny_config();
  c.seeds = {0, 1};
  const std::vector<MethodConfig> methods{MethodConfig::preset("plain_ft"), MethodConfig::preset("full")};
  const fs::path one = fresh_dir("jobs-1"), four = fresh_dir("jobs-4");
  const auto m1 = run_matrix(c, methods, c.seeds, one, 1);
  const auto m4 = run_matrix(c, methods, c.seeds, four, 4);
  REQUIRE(m1.size() == 4);
  REQUIRE(m4.size() == 4);
  for (std::size_t i = 0; i < m1.size(); ++i) {
    CHECK(m1[i].run_id == m4[i].run_id);
    CHECK(slurp(m1[i].metrics_path) == slurp(m4[i].metrics_path));
  }
  CHECK(m1[0].run_id == "plain_ft-seed0");
  CHECK(m1[3].run_id == "full-seed1");
}

TEST_CASE("re-evaluation from checkpoints reproduces the metrics") {
  const ExperimentConfig c = tiny_config();
  const fs::path out = fresh_dir("reeval");
  const auto m = run_experiment(c, MethodConfig::preset("full"), 0, out, base_for(0));
  std::string csv = metrics_csv_header() + "\n";
  for (const auto& r : evaluate_run(c, m, base_for(0))) csv += format_metric_row(r) + "\n";
  CHECK(csv == slurp(m.metrics_path));

  RunManifest broken = m;
  broken.checkpoints.pop_back();
  CHECK_THROWS_AS(evaluate_run(c, broken, base_for(0)), ProtocolError);
  broken = m;
  broken.status = "failed";
  CHECK_THROWS_AS(evaluate_run(c, broken, base_for(0)), ProtocolError);
}

TEST_CASE("the pretrain cache reuses identical artifacts") {
  const ExperimentConfig c = tiny_config();
  const World w = build_world(c);
  const fs::path out = fresh_dir("cache");
  const BaseArtifacts first = load_or_prepare_base(c, w, 0, out);
  CHECK(fs::exists(out / "pretrain-seed0" / "base.lfsd"));
  const BaseArtifacts second = load_or_prepare_base(c, w, 0, out);
  CHECK(first.model.params() == second.model.params());
  CHECK(first.probe.w1 == second.probe.w1);
  CHECK(first.model.params() == base_for(0).model.params());
  for (const auto& [token, ref] : first.references) CHECK(ref == base_for(0).references.at(token));
}

namespace {

// Records what crosses each session boundary.
class BoundaryProbe : public SessionObserver {
 public:
  std::vector<std::string> violations;
  std::vector<LatentSet> seen;
  const World* world = nullptr;

  void on_session_start(int session, const FewShotDataset& data, const SessionState& incoming) override {
    const TokenId expected = world->sessions[session - 1].token;
    if (data.spec.token != expected) violations.push_back("foreign few-shot set in session " + std::to_string(session));
    if (incoming.session_index != session - 1) violations.push_back("unexpected incoming state");
    if (int(incoming.context_bank.size()) != session - 1) violations.push_back("bank size");
    for (const auto& [s, entry] : incoming.context_bank.entries()) {
      if (s >= session) violations.push_back("bank holds a future session");
      // Only the stored contexts of earlier sessions may reach this one.
      const LatentSet& earlier = seen[std::size_t(s - 1)];
      for (Eigen::Index j = 0; j < entry.latents.cols(); ++j) {
        bool stored = false;
        for (Eigen::Index k = 0; k < earlier.cols(); ++k) stored = stored || entry.latents.col(j) == earlier.col(k);
        if (!stored) violations.push_back("bank latent not from its own session");
      }
    }
    seen.push_back(data.samples);
  }
};

}  // namespace

TEST_CASE("sessions only see their own few-shot data") {
  ExperimentConfig c = tiny_config();
  c.icgen.context_size = 1;
  const World w = build_world(c);
  BoundaryProbe probe;
  probe.world = &w;
  const auto m = run_experiment(c, MethodConfig::preset("full"), 0, fresh_dir("boundary"), base_for(0), &probe);
  CHECK(m.status == "ok");
  CHECK(probe.seen.size() == 3);
  CHECK(probe.violations.empty());
}

TEST_CASE("training failure is reported in the manifest") {
  ExperimentConfig c = tiny_config();
  c.train.lr = 1e200;
  c.train.steps = 50;
  const auto m = run_experiment(c, MethodConfig::preset("plain_ft"), 0, fresh_dir("failure"), base_for(0));
  CHECK(m.status == "failed");
  CHECK(m.failure.find("session 1") != std::string::npos);
  CHECK(read_manifest(m.run_dir / "manifest.json").status == "failed");
}

TEST_CASE("report tables") {
  CHECK_THROWS_AS(emit_report({}, fresh_dir("empty-report")), ConfigError);

  ExperimentConfig c = tiny_config();
  c.seeds = {0};
  std::vector<MethodConfig> methods;
  for (const char* name : {"plain_ft", "lwf", "dfkd", "full"}) methods.push_back(MethodConfig::preset(name));
  const fs::path out = fresh_dir("report");
  const auto manifests = run_matrix(c, methods, c.seeds, out, 2);
  const fs::path dir = out / "report";
  emit_report(manifests, dir);

  const auto comparison = lines(slurp(dir / "comparison.csv"));
  REQUIRE(!comparison.empty());
  CHECK(comparison[0] == metrics_csv_header());
  std::set<std::string> seen_methods;
  for (const auto& r : read_metrics(dir / "comparison.csv")) seen_methods.insert(r.method);
  CHECK(seen_methods == std::set<std::string>{"plain_ft", "lwf", "dfkd", "full"});

  const auto series = lines(slurp(dir / "iad_series.csv"));
  REQUIRE(!series.empty());
  CHECK(series[0] == "method,seed,session_2,session_3");
  CHECK(series.size() == 1 + 4 * 2);  // one row per run plus a mean row per method

  const auto summary = lines(slurp(dir / "summary.csv"));
  CHECK(summary[0].rfind("method,session", 0) == 0);
  CHECK(fs::exists(dir / "scatter_full-seed0.svg"));
}
