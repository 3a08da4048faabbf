#include "lfsd/config.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace lfsd {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Walks one JSON object, records unknown keys and type errors under
// dotted paths. Nothing throws until finish() has seen everything.
class Fields {
 public:
  Fields(const json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (!obj_.is_object()) errors_.push_back(where("") + "must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      errors_.push_back(where(key) + "has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
    return &obj_.at(key);
  }

  std::string where(const std::string& key) const {
    std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
    return p.empty() ? "config: " : p + ": ";
  }

  void finish() {
    if (!obj_.is_object()) return;
    for (const auto& [key, value] : obj_.items())
      if (!seen_.count(key)) errors_.push_back(where(key) + "unknown field");
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

Vec2 to_vec2(const std::vector<double>& v, const std::string& where, std::vector<std::string>& errors) {
  if (v.size() != 2) {
    errors.push_back(where + "must be a 2-vector");
    return Vec2::Zero();
  }
  return {v[0], v[1]};
}

std::vector<ConceptSpec> default_base_concepts() {
  // Five families evenly spaced on a radius-3.5 circle.
  const double r = 3.5;
  auto at = [r](double deg) {
    const double a = deg * std::numbers::pi / 180.0;
    return Vec2(r * std::cos(a), r * std::sin(a));
  };
  return {
      {"ring", 0, Family::ring, at(162), 1.0, 0.0, 0.05, 2},
      {"two_moons", 0, Family::two_moons, at(90), 0.9, 0.0, 0.05, 2},
      {"spiral", 0, Family::spiral, at(18), 1.2, 0.0, 0.04, 2},
      {"blobs", 0, Family::blobs, at(234), 1.0, 0.0, 0.35, 2},
      {"grid", 0, Family::grid, at(306), 0.6, 0.0, 0.05, 2},
  };
}

std::vector<SessionSpec> default_sessions(const std::vector<ConceptSpec>& base) {
  // Each session moves one base family onto an inner circle of radius 1.6,
  // rotated by 36 degrees, at half scale (shift length about 2.5).
  const std::vector<std::pair<std::string, double>> plan = {
      {"ring", 162}, {"two_moons", 90}, {"spiral", 18}, {"blobs", 234}, {"grid", 306}};
  std::vector<SessionSpec> out;
  int i = 1;
  for (const auto& [name, deg] : plan) {
    const double a = (deg + 36.0) * std::numbers::pi / 180.0;
    const Vec2 target(1.6 * std::cos(a), 1.6 * std::sin(a));
    Vec2 center = Vec2::Zero();
    for (const auto& b : base)
      if (b.name == name) center = b.center;
    out.push_back({"V" + std::to_string(i++), name, {target - center, 0.5, 0.0}, 5});
  }
  return out;
}

Distillation parse_distillation(const std::string& s, std::vector<std::string>& errors,
                                const std::string& where) {
  if (s == "none") return Distillation::none;
  if (s == "data_free") return Distillation::data_free;
  if (s == "lwf") return Distillation::lwf;
  errors.push_back(where + "unknown distillation '" + s + "' (none, data_free, lwf)");
  return Distillation::none;
}

Trajectory parse_trajectory(const std::string& s, std::vector<std::string>& errors,
                            const std::string& where) {
  if (s == "teacher") return Trajectory::teacher;
  if (s == "student") return Trajectory::student;
  errors.push_back(where + "unknown trajectory '" + s + "' (teacher, student)");
  return Trajectory::teacher;
}

UpdateMode parse_update(const std::string& s, std::vector<std::string>& errors,
                        const std::string& where) {
  if (s == "per_tau") return UpdateMode::per_tau;
  if (s == "per_outer") return UpdateMode::per_outer;
  errors.push_back(where + "unknown update mode '" + s + "' (per_tau, per_outer)");
  return UpdateMode::per_tau;
}

MethodConfig parse_method(const json& j, const std::string& path, std::vector<std::string>& errors) {
  MethodConfig m;
  if (j.is_string()) {
    try {
      return MethodConfig::preset(j.get<std::string>());
    } catch (const ConfigError& e) {
      errors.push_back(path + ": " + e.what());
      return m;
    }
  }
  Fields f(j, path, errors);
  std::string name;
  f.get("name", name);
  if (!name.empty()) {
    try {
      m = MethodConfig::preset(name);
    } catch (const ConfigError&) {
      m.name = name;  // custom method: flags below define it
    }
  }
  std::string distill = to_string(m.distillation), traj = to_string(m.trajectory);
  std::string update = m.update == UpdateMode::per_tau ? "per_tau" : "per_outer";
  f.get("distillation", distill);
  f.get("icgen", m.icgen);
  f.get("trajectory", traj);
  f.get("update", update);
  f.finish();
  m.distillation = parse_distillation(distill, errors, f.where("distillation"));
  m.trajectory = parse_trajectory(traj, errors, f.where("trajectory"));
  m.update = parse_update(update, errors, f.where("update"));
  return m;
}

json method_json(const MethodConfig& m) {
  return {{"name", m.name},
          {"distillation", to_string(m.distillation)},
          {"icgen", m.icgen},
          {"trajectory", to_string(m.trajectory)},
          {"update", m.update == UpdateMode::per_tau ? "per_tau" : "per_outer"}};
}

std::string activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "silu"; }

}  // namespace

std::string to_string(Distillation d) {
  switch (d) {
    case Distillation::none: return "none";
    case Distillation::data_free: return "data_free";
    case Distillation::lwf: return "lwf";
  }
  return "none";
}

std::string to_string(Trajectory t) { return t == Trajectory::teacher ? "teacher" : "student"; }

MethodConfig MethodConfig::preset(const std::string& name) {
  MethodConfig m;
  m.name = name;
  if (name == "plain_ft") {
    m.distillation = Distillation::none;
    m.icgen = false;
  } else if (name == "lwf") {
    m.distillation = Distillation::lwf;
    m.icgen = false;
  } else if (name == "dfkd") {
    m.distillation = Distillation::data_free;
    m.icgen = false;
  } else if (name == "full") {
    m.distillation = Distillation::data_free;
    m.icgen = true;
  } else if (name == "dfkd_student") {
    m.distillation = Distillation::data_free;
    m.trajectory = Trajectory::student;
    m.icgen = false;
  } else {
    throw ConfigError("unknown method preset '" + name +
                      "' (plain_ft, lwf, dfkd, full, dfkd_student)");
  }
  return m;
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.base_concepts = default_base_concepts();
  c.sessions = default_sessions(c.base_concepts);
  c.methods = {MethodConfig::preset("plain_ft"), MethodConfig::preset("lwf"),
               MethodConfig::preset("dfkd"), MethodConfig::preset("full")};
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError("config parse error at line " + std::to_string(line) + ", column " +
                      std::to_string(column) + ": " + e.what());
  }

  ExperimentConfig c = default_config();
  std::vector<std::string> errors;
  Fields top(root, "", errors);

  if (const json* seeds = top.child("seeds")) {
    try {
      c.seeds = seeds->get<std::vector<std::uint64_t>>();
    } catch (const json::exception&) {
      errors.push_back("seeds: must be a list of non-negative integers");
    }
  }
  if (const json* seed = top.child("seed")) {
    try {
      c.seeds = {seed->get<std::uint64_t>()};
    } catch (const json::exception&) {
      errors.push_back("seed: must be a non-negative integer");
    }
  }
  top.get("data_dim", c.data_dim);
  top.get("jobs", c.jobs);

  if (const json* m = top.child("model")) {
    Fields f(*m, "model", errors);
    std::string act = activation_name(c.model.activation);
    f.get("hidden_dims", c.model.hidden_dims);
    f.get("time_embed_dim", c.model.time_embed_dim);
    f.get("cond_embed_dim", c.model.cond_embed_dim);
    f.get("activation", act);
    f.finish();
    if (act == "silu") c.model.activation = Activation::silu;
    else if (act == "tanh") c.model.activation = Activation::tanh;
    else errors.push_back("model.activation: unknown activation '" + act + "' (silu, tanh)");
  }

  if (const json* base = top.child("base_concepts")) {
    c.base_concepts.clear();
    if (!base->is_array()) errors.push_back("base_concepts: must be a list");
    for (std::size_t i = 0; base->is_array() && i < base->size(); ++i) {
      const std::string path = "base_concepts[" + std::to_string(i) + "]";
      Fields f((*base)[i], path, errors);
      ConceptSpec s;
      std::string family = "ring";
      std::vector<double> center{0.0, 0.0};
      f.get("name", s.name);
      f.get("family", family);
      f.get("center", center);
      f.get("scale", s.scale);
      f.get("rotation", s.rotation);
      f.get("noise_std", s.noise_std);
      f.finish();
      try {
        s.family = parse_family(family);
      } catch (const ConfigError& e) {
        errors.push_back(path + ".family: " + e.what());
      }
      s.center = to_vec2(center, path + ".center: ", errors);
      if (s.name.empty()) errors.push_back(path + ".name: required");
      c.base_concepts.push_back(s);
    }
  }

  if (const json* sessions = top.child("sessions")) {
    c.sessions.clear();
    if (!sessions->is_array()) errors.push_back("sessions: must be a list");
    for (std::size_t i = 0; sessions->is_array() && i < sessions->size(); ++i) {
      const std::string path = "sessions[" + std::to_string(i) + "]";
      Fields f((*sessions)[i], path, errors);
      SessionSpec s;
      std::vector<double> shift{0.0, 0.0};
      f.get("name", s.name);
      f.get("base", s.base);
      f.get("shift", shift);
      f.get("scale_mul", s.transform.scale_mul);
      f.get("rot_add", s.transform.rot_add);
      f.get("K", s.K);
      f.finish();
      s.transform.shift = to_vec2(shift, path + ".shift: ", errors);
      if (s.name.empty()) errors.push_back(path + ".name: required");
      c.sessions.push_back(s);
    }
  } else if (top.child("base_concepts")) {
    c.sessions = default_sessions(c.base_concepts);
  }

  if (const json* p = top.child("pretrain")) {
    Fields f(*p, "pretrain", errors);
    f.get("steps", c.pretrain.steps);
    f.get("samples_per_concept", c.pretrain.samples_per_concept);
    f.get("batch", c.pretrain.batch);
    f.get("lr", c.pretrain.lr);
    f.get("cond_dropout", c.pretrain.cond_dropout);
    f.finish();
  }

  if (const json* t = top.child("train")) {
    Fields f(*t, "train", errors);
    f.get("steps", c.train.steps);
    f.get("lr", c.train.lr);
    f.get("lambda", c.train.lambda);
    f.get("T_tau", c.train.T_tau);
    f.get("cond_dropout", c.train.cond_dropout);
    f.get("batch", c.train.batch);
    f.finish();
  }

  if (const json* s = top.child("schedule")) {
    Fields f(*s, "schedule", errors);
    f.get("T_train", c.schedule.T_train);
    f.get("beta_start", c.schedule.beta_start);
    f.get("beta_end", c.schedule.beta_end);
    f.get("reference_steps", c.schedule.reference_steps);
    f.finish();
  }

  if (const json* ic = top.child("icgen")) {
    Fields f(*ic, "icgen", errors);
    f.get("s", c.icgen.strength);
    f.get("g", c.icgen.guidance);
    f.get("m", c.icgen.context_size);
    f.get("apply_to_current", c.icgen.apply_to_current);
    f.finish();
  }

  if (const json* m = top.child("method")) c.method = parse_method(*m, "method", errors);
  if (const json* ms = top.child("methods")) {
    c.methods.clear();
    if (!ms->is_array()) errors.push_back("methods: must be a list");
    for (std::size_t i = 0; ms->is_array() && i < ms->size(); ++i)
      c.methods.push_back(parse_method((*ms)[i], "methods[" + std::to_string(i) + "]", errors));
  }

  if (const json* e = top.child("eval")) {
    Fields f(*e, "eval", errors);
    f.get("n_samples", c.eval.n_samples);
    f.get("reference_samples", c.eval.reference_samples);
    f.get("scatter_points", c.eval.scatter_points);
    f.get("probe_hidden", c.eval.probe.hidden);
    f.get("probe_steps", c.eval.probe.steps);
    f.get("probe_samples_per_concept", c.eval.probe.samples_per_concept);
    f.finish();
  }
  top.finish();

  // Semantic checks.
  if (c.seeds.empty()) errors.push_back("seeds: at least one seed is required");
  if (c.data_dim < 2) errors.push_back("data_dim: must be >= 2 (concept families are planar)");
  if (c.jobs < 1) errors.push_back("jobs: must be >= 1");
  auto collect = [&errors](auto&& check) {
    try {
      check();
    } catch (const ConfigError& e) {
      errors.push_back(e.what());
    }
  };
  {
    DenoiserConfig probe_model = c.model;
    probe_model.data_dim = c.data_dim;
    probe_model.vocab_size = 2;
    collect([&] { probe_model.validate(); });
  }
  collect([&] { c.pretrain.validate(); });
  collect([&] { c.train.validate(); });
  collect([&] { make_scaled_schedule(c.schedule.T_train, c.schedule.beta_start, c.schedule.beta_end, c.schedule.reference_steps); });
  collect([&] { make_scaled_schedule(c.train.T_tau, c.schedule.beta_start, c.schedule.beta_end, c.schedule.reference_steps); });
  if (c.schedule.reference_steps < 1) errors.push_back("schedule.reference_steps: must be >= 1");
  if (!(c.icgen.strength >= 0.0 && c.icgen.strength <= 1.0))
    errors.push_back("icgen.s: must lie in [0, 1]");
  if (c.icgen.context_size < 0) errors.push_back("icgen.m: must be >= 0 (0 means K)");
  if (c.eval.n_samples < 1) errors.push_back("eval.n_samples: must be >= 1");
  if (c.eval.reference_samples < 1) errors.push_back("eval.reference_samples: must be >= 1");
  if (c.eval.scatter_points < 0) errors.push_back("eval.scatter_points: must be >= 0");
  if (c.eval.probe.hidden < 1 || c.eval.probe.steps < 1 || c.eval.probe.samples_per_concept < 1)
    errors.push_back("eval.probe_*: must be >= 1");
  if (c.base_concepts.empty()) errors.push_back("base_concepts: at least one base concept is required");

  std::set<std::string> names;
  for (auto& b : c.base_concepts) {
    b.data_dim = c.data_dim;
    if (!names.insert(b.name).second) errors.push_back("base_concepts: duplicate token '" + b.name + "'");
    collect([&] { b.validate(); });
  }
  for (std::size_t i = 0; i < c.sessions.size(); ++i) {
    const auto& s = c.sessions[i];
    const std::string path = "sessions[" + std::to_string(i) + "]";
    if (!names.insert(s.name).second) errors.push_back(path + ".name: duplicate token '" + s.name + "'");
    bool found = false;
    for (const auto& b : c.base_concepts) found = found || b.name == s.base;
    if (!found) errors.push_back(path + ".base: unknown base concept '" + s.base + "'");
    if (s.K < 1 || s.K > kMaxShots)
      errors.push_back(path + ".K: " + std::to_string(s.K) +
                       " outside [1, 10]; a K-shot session holds at most 10 samples");
    if (!(s.transform.scale_mul > 0.0)) errors.push_back(path + ".scale_mul: must be > 0");
    if (c.icgen.context_size > s.K) errors.push_back(path + ": icgen.m exceeds K");
  }
  if (c.sessions.empty()) errors.push_back("sessions: at least one session is required");
  if (c.methods.empty()) errors.push_back("methods: at least one method is required");

  if (!errors.empty()) {
    std::ostringstream msg;
    msg << errors.size() << " configuration error(s):";
    for (const auto& e : errors) msg << "\n  " << e;
    throw ConfigError(msg.str());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  json j;
  j["seeds"] = c.seeds;
  j["data_dim"] = c.data_dim;
  j["jobs"] = c.jobs;
  j["model"] = {{"hidden_dims", c.model.hidden_dims},
                {"time_embed_dim", c.model.time_embed_dim},
                {"cond_embed_dim", c.model.cond_embed_dim},
                {"activation", activation_name(c.model.activation)}};
  j["base_concepts"] = json::array();
  for (const auto& b : c.base_concepts)
    j["base_concepts"].push_back({{"name", b.name},
                                  {"family", to_string(b.family)},
                                  {"center", {b.center.x(), b.center.y()}},
                                  {"scale", b.scale},
                                  {"rotation", b.rotation},
                                  {"noise_std", b.noise_std}});
  j["sessions"] = json::array();
  for (const auto& s : c.sessions)
    j["sessions"].push_back({{"name", s.name},
                             {"base", s.base},
                             {"shift", {s.transform.shift.x(), s.transform.shift.y()}},
                             {"scale_mul", s.transform.scale_mul},
                             {"rot_add", s.transform.rot_add},
                             {"K", s.K}});
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"samples_per_concept", c.pretrain.samples_per_concept},
                   {"batch", c.pretrain.batch},
                   {"lr", c.pretrain.lr},
                   {"cond_dropout", c.pretrain.cond_dropout}};
  j["train"] = {{"steps", c.train.steps},       {"lr", c.train.lr},
                {"lambda", c.train.lambda},     {"T_tau", c.train.T_tau},
                {"cond_dropout", c.train.cond_dropout}, {"batch", c.train.batch}};
  j["schedule"] = {{"T_train", c.schedule.T_train},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end},
                   {"reference_steps", c.schedule.reference_steps}};
  j["icgen"] = {{"s", c.icgen.strength},
                {"g", c.icgen.guidance},
                {"m", c.icgen.context_size},
                {"apply_to_current", c.icgen.apply_to_current}};
  j["method"] = method_json(c.method);
  j["methods"] = json::array();
  for (const auto& m : c.methods) j["methods"].push_back(method_json(m));
  j["eval"] = {{"n_samples", c.eval.n_samples},
               {"reference_samples", c.eval.reference_samples},
               {"scatter_points", c.eval.scatter_points},
               {"probe_hidden", c.eval.probe.hidden},
               {"probe_steps", c.eval.probe.steps},
               {"probe_samples_per_concept", c.eval.probe.samples_per_concept}};
  return j.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  // FNV-1a over the canonical serialization.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const ConceptSpec& World::concept_of(TokenId token) const {
  for (const auto& b : base)
    if (b.token == token) return b;
  for (const auto& s : session_concepts)
    if (s.token == token) return s;
  throw TokenError("no concept for token " + std::to_string(token));
}

std::string World::name_of(TokenId token) const {
  if (token == kNullToken) return "null";
  return concept_of(token).name;
}

bool World::is_base(TokenId token) const {
  for (const auto& b : base)
    if (b.token == token) return true;
  return false;
}

World build_world(const ExperimentConfig& config) {
  World w;
  TokenId next = 1;
  std::set<TokenId> used{kNullToken};
  for (auto b : config.base_concepts) {
    b.token = next++;
    b.data_dim = config.data_dim;
    used.insert(b.token);
    w.base_vocab.push_back(b.token);
    w.base.push_back(b);
  }
  for (const auto& s : config.sessions) {
    const ConceptSpec* base = nullptr;
    for (const auto& b : w.base)
      if (b.name == s.base) base = &b;
    if (base == nullptr) throw ConfigError("session '" + s.name + "' names unknown base '" + s.base + "'");
    ConceptSpec derived = derive_session_concept(*base, s.transform, next++, used, s.name);
    used.insert(derived.token);
    w.sessions.push_back({derived.token, base->token});
    w.session_concepts.push_back(derived);
    w.shots.push_back(s.K);
  }
  w.vocab_size = next;
  return w;
}

}  // namespace lfsd
