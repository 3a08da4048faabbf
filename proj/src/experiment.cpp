#include "lfsd/experiment.hpp"

#include "lfsd/sampler.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace lfsd {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream tags for derive_seed; one namespace per purpose.
enum : std::uint64_t {
  kTagPretrain = 1,
  kTagProbe = 2,
  kTagReference = 3,
  kTagFewShot = 10,
  kTagSession = 20,
  kTagEval = 30,
};

std::string fixed(double v, int digits = 6) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

DenoiserConfig model_config_for(const ExperimentConfig& config, const World& world) {
  DenoiserConfig m = config.model;
  m.data_dim = config.data_dim;
  m.vocab_size = world.vocab_size;
  return m;
}

TrainConfig train_config_for(const ExperimentConfig& config, const MethodConfig& method,
                             std::uint64_t seed) {
  TrainConfig t = config.train;
  t.seed = seed;
  t.distillation = method.distillation;
  t.trajectory = method.trajectory;
  t.update = method.update;
  return t;
}

ExperimentConfig with_method(ExperimentConfig config, const MethodConfig& method) {
  config.method = method;
  return config;
}

struct ScatterRow {
  int session;
  std::string token;
  LatentSet points;
};

std::string scatter_csv(const std::vector<ScatterRow>& rows) {
  std::string out = "session,token,x,y\n";
  for (const auto& r : rows)
    for (Eigen::Index j = 0; j < r.points.cols(); ++j)
      out += std::to_string(r.session) + "," + r.token + "," + fixed(r.points(0, j), 5) + "," +
             fixed(r.points(1, j), 5) + "\n";
  return out;
}

std::string loss_trace_csv(const std::vector<std::pair<int, LossTrace>>& traces) {
  std::string out = "session,step,L_DM,L_KD,L_train\n";
  for (const auto& [session, trace] : traces)
    for (const auto& r : trace)
      out += std::to_string(session) + "," + std::to_string(r.step) + "," + fixed(r.l_dm, 8) +
             "," + fixed(r.l_kd, 8) + "," + fixed(r.l_train, 8) + "\n";
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& s) { return s.empty() ? std::nan("") : std::stod(s); }

std::string base_cache_key(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.method = MethodConfig{};
  c.methods.clear();
  c.seeds = {0};
  c.jobs = 1;
  c.train = TrainConfig{};
  c.icgen = IcgenConfig{};
  return hex64(config_hash(c));
}

}  // namespace

Schedules make_schedules(const ExperimentConfig& config) {
  const auto& s = config.schedule;
  return {make_scaled_schedule(s.T_train, s.beta_start, s.beta_end, s.reference_steps),
          make_scaled_schedule(config.train.T_tau, s.beta_start, s.beta_end, s.reference_steps)};
}

BaseArtifacts prepare_base(const ExperimentConfig& config, const World& world, std::uint64_t seed) {
  const Schedules sched = make_schedules(config);
  BaseArtifacts out;
  out.seed = seed;
  Rng pretrain_rng(derive_seed(seed, {kTagPretrain}));
  // Rounded through the checkpoint format so a reloaded backbone is identical.
  out.model = round_to_checkpoint_precision(pretrain_base(
      config.pretrain, model_config_for(config, world), world.base, sched.train, pretrain_rng,
      &out.trace));
  Rng probe_rng(derive_seed(seed, {kTagProbe}));
  out.probe = probe_from_container(to_container(train_probe(world.base, config.eval.probe, probe_rng)));
  out.references = prepare_base_references(config, world, seed).references;
  return out;
}

std::string metrics_csv_header() { return "run_id,seed,session,token,method,IA,TA,IAD,n_samples"; }

std::string format_metric_row(const MetricRow& r) {
  return r.run_id + "," + std::to_string(r.seed) + "," + std::to_string(r.session) + "," + r.token +
         "," + r.method + "," + fixed(r.ia) + "," + fixed(r.ta) + "," + fixed(r.iad) + "," +
         std::to_string(r.n_samples);
}

std::vector<MetricRow> read_metrics(const fs::path& path) {
  std::stringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line != metrics_csv_header()) throw FormatError("'" + path.string() + "' is not a metrics CSV");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 9) throw FormatError("malformed metrics row in '" + path.string() + "'");
    rows.push_back({c[0], std::stoull(c[1]), std::stoi(c[2]), c[3], c[4], parse_cell(c[5]),
                    parse_cell(c[6]), parse_cell(c[7]), std::stoi(c[8])});
  }
  return rows;
}

LatentSet generate_for_token(const Denoiser& model, const ContextBank& bank, TokenId token,
                             bool use_icgen, const ExperimentConfig& config, const Schedule& sched,
                             Rng& rng, int n) {
  if (use_icgen && bank.contains(token))
    return icgen_generate(model, bank, token, config.icgen.strength, sched, config.icgen.guidance,
                          rng, n);
  return sample(model, token, sched, config.icgen.guidance, rng, n);
}

SessionEval evaluate_session(const ExperimentConfig& config, const World& world,
                             const MethodConfig& method, std::uint64_t seed,
                             const std::string& run_id, int session, const Denoiser& model,
                             const ContextBank& bank, const BaseArtifacts& base,
                             IaHistory& history) {
  const Schedules sched = make_schedules(config);
  const int n = config.eval.n_samples;
  SessionEval out;
  auto generate = [&](TokenId token, bool icgen) {
    Rng rng(derive_seed(seed, {kTagEval, std::uint64_t(session), std::uint64_t(token)}));
    LatentSet gen = generate_for_token(model, bank, token, icgen, config, sched.train, rng, n);
    out.scatter[token] = gen.leftCols(std::min<Eigen::Index>(gen.cols(), config.eval.scatter_points));
    return gen;
  };
  auto row = [&](const std::string& token, double ia, double ta, double drop) {
    out.rows.push_back({run_id, seed, session, token, method.name, ia, ta, drop, n});
  };

  const double nan = std::nan("");
  std::vector<double> own, now;
  double ia_sum = 0.0;
  for (int j = 1; j <= session; ++j) {
    const TokenId token = world.sessions[j - 1].token;
    const bool icgen = method.icgen && (j < session || config.icgen.apply_to_current);
    const double ia = image_alignment(generate(token, icgen), base.references.at(token));
    history.record(token, j, session, ia);
    out.ia[token] = ia;
    ia_sum += ia;
    double drop = nan;
    if (j < session) {
      const double ia_own = history.at(token, j);
      own.push_back(ia_own);
      now.push_back(ia);
      drop = iad(std::vector<double>{ia_own}, std::vector<double>{ia});
    }
    row(world.name_of(token), ia, nan, drop);
  }

  double ta_sum = 0.0;
  for (TokenId token : world.base_vocab) {
    const LatentSet gen = generate(token, false);
    const double ta = text_alignment(base.probe, gen, token);
    ta_sum += ta;
    row(world.name_of(token), image_alignment(gen, base.references.at(token)), ta, nan);
  }

  const double mean_ta = ta_sum / double(world.base_vocab.size());
  const double mean_ia = session > 0 ? ia_sum / double(session) : nan;
  row("ALL", mean_ia, mean_ta, session >= 2 ? iad(own, now) : nan);
  return out;
}

std::string run_id_for(const MethodConfig& method, std::uint64_t seed) {
  return method.name + "-seed" + std::to_string(seed);
}

void write_manifest(const RunManifest& m) {
  json checkpoints = json::array();
  for (const auto& p : m.checkpoints) checkpoints.push_back(p.string());
  json j = {{"run_id", m.run_id},
            {"method", m.method},
            {"seed", m.seed},
            {"config_hash", m.config_hash},
            {"run_dir", m.run_dir.string()},
            {"config", m.config_path.string()},
            {"checkpoints", checkpoints},
            {"bank", m.bank_path.string()},
            {"probe", m.probe_path.string()},
            {"metrics", m.metrics_path.string()},
            {"loss_trace", m.loss_trace_path.string()},
            {"scatter", m.scatter_path.string()},
            {"timings", m.timings},
            {"status", m.status},
            {"failure", m.failure}};
  write_text(m.run_dir / "manifest.json", j.dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
    RunManifest m;
    m.run_id = j.at("run_id");
    m.method = j.at("method");
    m.seed = j.at("seed");
    m.config_hash = j.at("config_hash");
    m.run_dir = j.at("run_dir").get<std::string>();
    m.config_path = j.at("config").get<std::string>();
    for (const auto& p : j.at("checkpoints")) m.checkpoints.emplace_back(p.get<std::string>());
    m.bank_path = j.at("bank").get<std::string>();
    m.probe_path = j.at("probe").get<std::string>();
    m.metrics_path = j.at("metrics").get<std::string>();
    m.loss_trace_path = j.at("loss_trace").get<std::string>();
    m.scatter_path = j.at("scatter").get<std::string>();
    m.timings = j.at("timings").get<std::map<std::string, double>>();
    m.status = j.at("status");
    m.failure = j.at("failure");
    return m;
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
}

RunManifest run_experiment(const ExperimentConfig& config, const MethodConfig& method,
                           std::uint64_t seed, const fs::path& out_root, const BaseArtifacts& base,
                           SessionObserver* observer) {
  const auto start = std::chrono::steady_clock::now();
  const World world = build_world(config);
  const Schedules sched = make_schedules(config);
  const ExperimentConfig run_config = with_method(config, method);

  RunManifest m;
  m.run_id = run_id_for(method, seed);
  m.method = method.name;
  m.seed = seed;
  m.config_hash = hex64(config_hash(run_config));
  m.run_dir = fs::absolute(out_root / m.run_id);
  fs::create_directories(m.run_dir / "checkpoints");
  fs::create_directories(m.run_dir / "report");
  m.config_path = m.run_dir / "config.json";
  m.bank_path = m.run_dir / "bank.lfsd";
  m.probe_path = m.run_dir / "probe.lfsd";
  m.metrics_path = m.run_dir / "metrics.csv";
  m.loss_trace_path = m.run_dir / "loss_trace.csv";
  m.scatter_path = m.run_dir / "report" / "scatter.csv";
  write_text(m.config_path, serialize_config(run_config) + "\n");
  save_checkpoint(base.probe, m.probe_path);

  const TrainConfig train = train_config_for(config, method, seed);
  SessionState state;
  state.model = base.model;
  IaHistory history;
  std::vector<MetricRow> rows;
  std::vector<ScatterRow> scatter;
  std::vector<std::pair<int, LossTrace>> traces;

  auto collect = [&](int session, SessionEval&& ev) {
    rows.insert(rows.end(), ev.rows.begin(), ev.rows.end());
    for (auto& [token, pts] : ev.scatter) scatter.push_back({session, world.name_of(token), std::move(pts)});
  };
  collect(0, evaluate_session(run_config, world, method, seed, m.run_id, 0, state.model,
                              state.context_bank, base, history));

  double train_seconds = 0.0, eval_seconds = 0.0;
  const int sessions = int(world.sessions.size());
  for (int i = 1; i <= sessions; ++i) {
    SessionState next;
    {
      // The few-shot set lives only inside this block.
      Rng data_rng(derive_seed(seed, {kTagFewShot, std::uint64_t(i)}));
      const FewShotDataset fewshot = make_fewshot(world.session_concepts[i - 1], world.shots[i - 1], data_rng);
      const PromptSets prompts = build_prompt_sets(i, world.base_vocab, world.sessions);
      if (observer) observer->on_session_start(i, fewshot, state);
      Rng session_rng(derive_seed(seed, {kTagSession, std::uint64_t(i)}));
      LossTrace trace;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        next = train_session(state, fewshot, prompts, train, sched.train, sched.distill, session_rng,
                             config.icgen.context_size, &trace);
      } catch (const TrainingError& e) {
        m.status = "failed";
        m.failure = "session " + std::to_string(i) + ": " + e.what();
        traces.emplace_back(i, std::move(trace));
        write_text(m.loss_trace_path, loss_trace_csv(traces));
        m.timings["total"] = seconds_since(start);
        write_manifest(m);
        return m;
      }
      train_seconds += seconds_since(t0);
      traces.emplace_back(i, std::move(trace));
    }
    next.model = round_to_checkpoint_precision(next.model);
    const fs::path ckpt = m.run_dir / "checkpoints" / ("session_" + std::to_string(i) + ".lfsd");
    save_checkpoint(next.model, ckpt);
    m.checkpoints.push_back(ckpt);

    const auto t1 = std::chrono::steady_clock::now();
    collect(i, evaluate_session(run_config, world, method, seed, m.run_id, i, next.model,
                                next.context_bank, base, history));
    eval_seconds += seconds_since(t1);
    if (observer) observer->on_session_end(i, next);
    state = std::move(next);
  }

  save_checkpoint(state.context_bank, m.bank_path);
  std::string csv = metrics_csv_header() + "\n";
  for (const auto& r : rows) csv += format_metric_row(r) + "\n";
  write_text(m.metrics_path, csv);
  write_text(m.loss_trace_path, loss_trace_csv(traces));
  write_text(m.scatter_path, scatter_csv(scatter));
  m.timings["train"] = train_seconds;
  m.timings["eval"] = eval_seconds;
  m.timings["total"] = seconds_since(start);
  write_manifest(m);
  return m;
}

std::vector<MetricRow> evaluate_run(const ExperimentConfig& config, const RunManifest& manifest,
                                    const BaseArtifacts& base) {
  if (manifest.status != "ok") throw ProtocolError("run '" + manifest.run_id + "' did not complete");
  const World world = build_world(config);
  MethodConfig method = config.method;
  for (const auto& candidate : config.methods)
    if (candidate.name == manifest.method) method = candidate;
  if (method.name != manifest.method) method = MethodConfig::preset(manifest.method);
  const ExperimentConfig run_config = with_method(config, method);
  if (manifest.checkpoints.size() != world.sessions.size())
    throw ProtocolError("run '" + manifest.run_id + "' has " + std::to_string(manifest.checkpoints.size()) +
                        " checkpoints for " + std::to_string(world.sessions.size()) + " sessions");

  BaseArtifacts loaded = base;
  loaded.probe = load_probe(manifest.probe_path);
  const ContextBank bank = load_bank(manifest.bank_path);
  IaHistory history;
  std::vector<MetricRow> rows;
  auto append = [&rows](SessionEval&& ev) { rows.insert(rows.end(), ev.rows.begin(), ev.rows.end()); };
  append(evaluate_session(run_config, world, method, manifest.seed, manifest.run_id, 0, base.model,
                          ContextBank{}, loaded, history));
  for (int i = 1; i <= int(world.sessions.size()); ++i) {
    const Denoiser model = load_denoiser(manifest.checkpoints[i - 1]);
    append(evaluate_session(run_config, world, method, manifest.seed, manifest.run_id, i, model,
                            bank.up_to(i), loaded, history));
  }
  return rows;
}

namespace {

// Runs fn(i) for i in [0, count) on `jobs` threads; rethrows the first
// exception after all workers stop.
template <typename Fn>
void parallel_for(int count, int jobs, Fn fn) {
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min(jobs, count));
  std::vector<std::thread> threads;
  for (int t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

BaseArtifacts load_or_prepare_base(const ExperimentConfig& config, const World& world,
                                   std::uint64_t seed, const fs::path& out_root) {
  const fs::path dir = out_root / ("pretrain-seed" + std::to_string(seed));
  const fs::path key_path = dir / "cache_key.txt";
  const std::string key = base_cache_key(config);
  if (fs::exists(key_path) && read_text(key_path) == key) {
    BaseArtifacts base = prepare_base_references(config, world, seed);
    base.model = load_denoiser(dir / "base.lfsd");
    base.probe = load_probe(dir / "probe.lfsd");
    return base;
  }
  BaseArtifacts base = prepare_base(config, world, seed);
  fs::create_directories(dir);
  save_checkpoint(base.model, dir / "base.lfsd");
  save_checkpoint(base.probe, dir / "probe.lfsd");
  write_text(dir / "loss_trace.csv", loss_trace_csv({{0, base.trace}}));
  write_text(key_path, key);
  return base;
}

BaseArtifacts prepare_base_references(const ExperimentConfig& config, const World& world,
                                      std::uint64_t seed) {
  BaseArtifacts out;
  out.seed = seed;
  auto add_reference = [&](const ConceptSpec& spec) {
    Rng rng(derive_seed(seed, {kTagReference, std::uint64_t(spec.token)}));
    out.references[spec.token] = sample_concept(spec, config.eval.reference_samples, rng);
  };
  for (const auto& b : world.base) add_reference(b);
  for (const auto& s : world.session_concepts) add_reference(s);
  return out;
}

std::vector<RunManifest> run_matrix(const ExperimentConfig& config,
                                    const std::vector<MethodConfig>& methods,
                                    const std::vector<std::uint64_t>& seeds, const fs::path& out_root,
                                    int jobs) {
  const World world = build_world(config);
  std::vector<BaseArtifacts> bases(seeds.size());
  parallel_for(int(seeds.size()), jobs, [&](int s) {
    bases[s] = load_or_prepare_base(config, world, seeds[s], out_root);
  });
  const int runs = int(methods.size() * seeds.size());
  std::vector<RunManifest> manifests(runs);
  parallel_for(runs, jobs, [&](int k) {
    const std::size_t mi = std::size_t(k) / seeds.size(), si = std::size_t(k) % seeds.size();
    manifests[k] = run_experiment(config, methods[mi], seeds[si], out_root, bases[si]);
  });
  return manifests;
}

namespace {

struct SvgCanvas {
  double lo = -6.0, hi = 6.0, size = 400.0;
  double px(double x) const { return (x - lo) / (hi - lo) * size; }
  double py(double y) const { return size - (y - lo) / (hi - lo) * size; }
};

std::string render_svg(const std::vector<std::tuple<std::string, double, double>>& points,
                       const std::string& title) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::map<std::string, int> colors;
  for (const auto& [token, x, y] : points)
    if (!colors.count(token)) colors.emplace(token, int(colors.size()));
  const SvgCanvas c;
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"520\" height=\"420\">\n";
  out += "<rect width=\"520\" height=\"420\" fill=\"white\"/>\n";
  out += "<text x=\"4\" y=\"14\" font-size=\"12\">" + title + "</text>\n";
  for (const auto& [token, x, y] : points)
    out += "<circle cx=\"" + fixed(c.px(x), 2) + "\" cy=\"" + fixed(c.py(y) + 10, 2) +
           "\" r=\"1.5\" fill=\"" + palette[colors[token] % 10] + "\"/>\n";
  int row = 0;
  for (const auto& [token, idx] : colors) {
    const std::string y = std::to_string(30 + 14 * row++);
    out += "<circle cx=\"412\" cy=\"" + y + "\" r=\"4\" fill=\"" + palette[idx % 10] + "\"/>\n";
    out += "<text x=\"420\" y=\"" + y + "\" font-size=\"11\" dominant-baseline=\"middle\">" + token + "</text>\n";
  }
  return out + "</svg>\n";
}

}  // namespace

void emit_report(const std::vector<RunManifest>& manifests, const fs::path& out_dir) {
  if (manifests.empty()) throw ConfigError("report needs at least one run manifest");
  fs::create_directories(out_dir);

  std::vector<MetricRow> all;
  std::vector<std::string> method_order;
  std::string loss = "run_id,method,seed,session,step,L_DM,L_KD,L_train\n";
  std::string scatter = "run_id,method,seed,session,token,x,y\n";
  for (const auto& m : manifests) {
    if (m.status != "ok") continue;
    if (std::find(method_order.begin(), method_order.end(), m.method) == method_order.end())
      method_order.push_back(m.method);
    auto rows = read_metrics(m.metrics_path);
    all.insert(all.end(), rows.begin(), rows.end());
    const std::string prefix = m.run_id + "," + m.method + "," + std::to_string(m.seed) + ",";
    auto append_body = [&prefix](std::string& dst, const fs::path& src) {
      std::stringstream in(read_text(src));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty()) dst += prefix + line + "\n";
    };
    append_body(loss, m.loss_trace_path);
    append_body(scatter, m.scatter_path);

    // Final-session scatter render per run.
    std::vector<std::tuple<std::string, double, double>> pts;
    int last = 0;
    std::stringstream in(read_text(m.scatter_path));
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<std::string>> cells;
    while (std::getline(in, line))
      if (!line.empty()) cells.push_back(split_csv_line(line));
    for (const auto& c : cells) last = std::max(last, std::stoi(c[0]));
    for (const auto& c : cells)
      if (std::stoi(c[0]) == last) pts.emplace_back(c[1], std::stod(c[2]), std::stod(c[3]));
    write_text(out_dir / ("scatter_" + m.run_id + ".svg"),
               render_svg(pts, m.run_id + ", session " + std::to_string(last)));
  }
  if (all.empty()) throw ProtocolError("no completed runs to report");

  std::string merged = metrics_csv_header() + "\n";
  for (const auto& r : all) merged += format_metric_row(r) + "\n";
  write_text(out_dir / "comparison.csv", merged);
  write_text(out_dir / "loss_traces.csv", loss);
  write_text(out_dir / "scatter.csv", scatter);

  int last_session = 0;
  for (const auto& r : all) last_session = std::max(last_session, r.session);

  // Seed-averaged ALL rows per (method, session).
  std::string summary = "method,session,n_seeds,IA,TA,IAD\n";
  std::string series = "method,seed";
  for (int s = 2; s <= last_session; ++s) series += ",session_" + std::to_string(s);
  series += "\n";
  std::string rcf = "method,seed,token,TA\n";
  std::string icgen = "method,seed,token,IA\n";
  for (const auto& method : method_order) {
    std::map<int, std::vector<const MetricRow*>> by_session;
    std::map<std::uint64_t, std::map<int, double>> iad_by_seed;
    for (const auto& r : all) {
      if (r.method != method) continue;
      if (r.token == "ALL") {
        by_session[r.session].push_back(&r);
        if (!std::isnan(r.iad)) iad_by_seed[r.seed][r.session] = r.iad;
      } else if (r.session == last_session) {
        if (!std::isnan(r.ta)) rcf += method + "," + std::to_string(r.seed) + "," + r.token + "," + fixed(r.ta) + "\n";
        else if (!std::isnan(r.iad)) icgen += method + "," + std::to_string(r.seed) + "," + r.token + "," + fixed(r.ia) + "\n";
      }
    }
    for (const auto& [session, rows] : by_session) {
      double ia = 0, ta = 0, drop = 0;
      for (const auto* r : rows) {
        ia += r->ia;
        ta += r->ta;
        drop += r->iad;
      }
      const double k = double(rows.size());
      summary += method + "," + std::to_string(session) + "," + std::to_string(rows.size()) + "," +
                 fixed(ia / k) + "," + fixed(ta / k) + "," + fixed(drop / k) + "\n";
    }
    std::map<int, double> mean;
    for (const auto& [seed, values] : iad_by_seed) {
      series += method + "," + std::to_string(seed);
      for (int s = 2; s <= last_session; ++s) {
        auto it = values.find(s);
        const double v = it == values.end() ? std::nan("") : it->second;
        series += "," + fixed(v);
        mean[s] += v / double(iad_by_seed.size());
      }
      series += "\n";
    }
    series += method + ",mean";
    for (int s = 2; s <= last_session; ++s) series += "," + fixed(mean[s]);
    series += "\n";
  }
  write_text(out_dir / "summary.csv", summary);
  write_text(out_dir / "iad_series.csv", series);
  write_text(out_dir / "rcf_ta.csv", rcf);
  write_text(out_dir / "icgen_ia.csv", icgen);
}

}  // namespace lfsd
