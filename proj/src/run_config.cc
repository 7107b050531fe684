#include "reachcal/run_config.h"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "reachcal/crc64.h"
#include "reachcal/errors.h"
#include "reachcal/random.h"

namespace reachcal {
namespace {

using nlohmann::json;

// Reads an object, remembering which keys were consumed so leftovers can be
// reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_box(Reader& r, Box& box) {
  r.get("x0_lower", box.lower);
  r.get("x0_upper", box.upper);
}

SystemSpec read_system(Reader r) {
  std::string type = "duffing";
  r.get("type", type);
  if (type == "duffing") {
    DuffingSystem s;
    r.get("a", s.params.a);
    r.get("b", s.params.b);
    r.get("c", s.params.c);
    r.get("A", s.params.A);
    r.get("omega", s.params.omega);
    read_box(r, s.params.x0_box);
    r.get("substeps", s.substeps);
    r.finish();
    return s;
  }
  if (type == "quadrotor") {
    QuadrotorSystem s;
    r.get("g", s.params.g);
    r.get("K_rotor", s.params.K_rotor);
    r.get("d0", s.params.d0);
    r.get("d1", s.params.d1);
    r.get("n0", s.params.n0);
    read_box(r, s.params.x0_box);
    r.get("u1_range", s.params.u1_range);
    r.get("u2_range", s.params.u2_range);
    r.get("t1", s.t1);
    r.get("step", s.step);
    r.finish();
    return s;
  }
  if (type == "gray_scott") {
    GrayScottSystem s;
    r.get("Du", s.params.Du);
    r.get("Dv", s.params.Dv);
    r.get("F", s.params.F);
    r.get("kappa", s.params.kappa);
    r.get("grid", s.params.grid);
    r.get("dx", s.params.dx);
    r.get("substeps", s.params.substeps);
    r.finish();
    return s;
  }
  throw ConfigError("system.type: unknown system '" + type + "'");
}

json system_json(const SystemSpec& system) {
  return std::visit(
      [](const auto& s) -> json {
        using S = std::decay_t<decltype(s)>;
        json j;
        if constexpr (std::is_same_v<S, DuffingSystem>) {
          j = {{"type", "duffing"}, {"a", s.params.a}, {"b", s.params.b},
               {"c", s.params.c},   {"A", s.params.A}, {"omega", s.params.omega},
               {"x0_lower", s.params.x0_box.lower}, {"x0_upper", s.params.x0_box.upper},
               {"substeps", s.substeps}};
        } else if constexpr (std::is_same_v<S, QuadrotorSystem>) {
          j = {{"type", "quadrotor"}, {"g", s.params.g}, {"K_rotor", s.params.K_rotor},
               {"d0", s.params.d0}, {"d1", s.params.d1}, {"n0", s.params.n0},
               {"x0_lower", s.params.x0_box.lower}, {"x0_upper", s.params.x0_box.upper},
               {"u1_range", s.params.u1_range}, {"u2_range", s.params.u2_range},
               {"t1", s.t1}, {"step", s.step}};
        } else {
          j = {{"type", "gray_scott"}, {"Du", s.params.Du}, {"Dv", s.params.Dv},
               {"F", s.params.F}, {"kappa", s.params.kappa}, {"grid", s.params.grid},
               {"dx", s.params.dx}, {"substeps", s.params.substeps}};
        }
        return j;
      },
      system);
}

}  // namespace

void RunConfig::validate() const {
  std::visit([](const auto& s) { s.params.validate(); }, system);
  if (N < 1) throw ConfigError("dataset.N must be >= 1");
  if (K < 1) throw ConfigError("dataset.K must be >= 1");
  if (std::holds_alternative<QuadrotorSystem>(system)) {
    const auto& q = std::get<QuadrotorSystem>(system);
    if (K != 1) throw ConfigError("dataset.K must be 1 for the quadrotor (terminal state only)");
    if (!(q.t1 > 0 && q.step > 0)) throw ConfigError("system.t1 and system.step must be > 0");
  } else if (std::holds_alternative<DuffingSystem>(system)) {
    if (!(dt > 0)) throw ConfigError("dataset.dt must be > 0");
    if (std::get<DuffingSystem>(system).substeps < 1) {
      throw ConfigError("system.substeps must be >= 1");
    }
  }
  if (!(split.train > 0 && split.cal > 0 && split.test > 0) ||
      split.train + split.cal + split.test > 1.0 + 1e-9) {
    throw ConfigError("split ratios must be positive and sum to at most 1");
  }
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("budget.alpha must be in (0, 1)");
  if (!(delta > 0 && delta < 1)) throw ConfigError("budget.delta must be in (0, 1)");
  if (grid_L < 2) throw ConfigError("grid_L must be >= 2");
  if (evaluation.cells < 2) throw ConfigError("evaluation.cells must be >= 2");
  if (evaluation.probes_per_cell < 1) throw ConfigError("evaluation.probes_per_cell must be >= 1");
  if (evaluation.pac_splits < 1) throw ConfigError("evaluation.pac_splits must be >= 1");
  for (int k : evaluation.steps) {
    if (k < 0 || static_cast<std::size_t>(k) >= K) {
      throw ConfigError("evaluation.steps: step " + std::to_string(k) + " out of range");
    }
  }
  for (int d : evaluation.christoffel_degrees) {
    if (d < 0 || d > 20) throw ConfigError("evaluation.christoffel_degrees must be in [0, 20]");
  }
  try {
    denoiser.validate();
    score.validate(make_noise_schedule());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

NoiseSchedule RunConfig::make_noise_schedule() const {
  try {
    return make_schedule(schedule.T, schedule.beta1, schedule.betaT);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  denoiser.seed = train_seed();
  score.seed = score_seed();
}

std::uint64_t RunConfig::train_seed() const { return derive_key({seed, 0x7EA1}); }
std::uint64_t RunConfig::score_seed() const { return derive_key({seed, 0x5C0E}); }

std::vector<int> RunConfig::eval_steps() const {
  if (!evaluation.steps.empty()) return evaluation.steps;
  std::vector<int> all(K);
  for (std::size_t k = 0; k < K; ++k) all[k] = static_cast<int>(k);
  return all;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  Reader root(j, "");
  if (root.has("system")) cfg.system = read_system(root.child("system"));
  if (root.has("dataset")) {
    Reader r = root.child("dataset");
    r.get("N", cfg.N);
    r.get("K", cfg.K);
    r.get("dt", cfg.dt);
    r.finish();
  }
  root.get("seed", cfg.seed);
  if (root.has("split")) {
    Reader r = root.child("split");
    r.get("train", cfg.split.train);
    r.get("cal", cfg.split.cal);
    r.get("test", cfg.split.test);
    r.finish();
  }
  if (root.has("denoiser")) {
    Reader r = root.child("denoiser");
    r.get("hidden_dim", cfg.denoiser.hidden_dim);
    r.get("layers", cfg.denoiser.layers);
    r.get("embed_dim", cfg.denoiser.embed_dim);
    r.get("lr", cfg.denoiser.lr);
    r.get("weight_decay", cfg.denoiser.weight_decay);
    r.get("batch_size", cfg.denoiser.batch_size);
    r.get("epochs", cfg.denoiser.epochs);
    r.finish();
  }
  if (root.has("schedule")) {
    Reader r = root.child("schedule");
    r.get("T", cfg.schedule.T);
    r.get("beta1", cfg.schedule.beta1);
    r.get("betaT", cfg.schedule.betaT);
    r.finish();
  }
  if (root.has("score")) {
    Reader r = root.child("score");
    r.get("taus", cfg.score.taus);
    r.get("repeats", cfg.score.repeats);
    std::string w = "uniform";
    r.get("weighting", w);
    if (w == "uniform") {
      cfg.score.weighting = ScoreWeighting::kUniform;
    } else if (w == "elbo") {
      cfg.score.weighting = ScoreWeighting::kElbo;
    } else {
      throw ConfigError("score.weighting: expected 'uniform' or 'elbo'");
    }
    r.finish();
  }
  if (root.has("budget")) {
    Reader r = root.child("budget");
    r.get("alpha", cfg.alpha);
    r.get("delta", cfg.delta);
    r.finish();
  }
  root.get("grid_L", cfg.grid_L);
  if (root.has("evaluation")) {
    Reader r = root.child("evaluation");
    auto& e = cfg.evaluation;
    r.get("cells", e.cells);
    r.get("inflation", e.inflation);
    r.get("steps", e.steps);
    r.get("probes_per_cell", e.probes_per_cell);
    r.get("pac_splits", e.pac_splits);
    r.get("sensitivity_sigmas", e.sensitivity_sigmas);
    r.get("christoffel_degrees", e.christoffel_degrees);
    r.get("christoffel_ridge", e.christoffel_ridge);
    r.finish();
  }
  std::string out = cfg.output_dir.string();
  root.get("output_dir", out);
  cfg.output_dir = out;
  root.finish();
  cfg.set_seed(cfg.seed);
  cfg.validate();
  return cfg;
}

json to_json(const RunConfig& cfg) {
  const auto& e = cfg.evaluation;
  return {
      {"system", system_json(cfg.system)},
      {"dataset", {{"N", cfg.N}, {"K", cfg.K}, {"dt", cfg.dt}}},
      {"seed", cfg.seed},
      {"split", {{"train", cfg.split.train}, {"cal", cfg.split.cal}, {"test", cfg.split.test}}},
      {"denoiser",
       {{"hidden_dim", cfg.denoiser.hidden_dim},
        {"layers", cfg.denoiser.layers},
        {"embed_dim", cfg.denoiser.embed_dim},
        {"lr", cfg.denoiser.lr},
        {"weight_decay", cfg.denoiser.weight_decay},
        {"batch_size", cfg.denoiser.batch_size},
        {"epochs", cfg.denoiser.epochs}}},
      {"schedule",
       {{"T", cfg.schedule.T}, {"beta1", cfg.schedule.beta1}, {"betaT", cfg.schedule.betaT}}},
      {"score",
       {{"taus", cfg.score.taus},
        {"repeats", cfg.score.repeats},
        {"weighting", cfg.score.weighting == ScoreWeighting::kElbo ? "elbo" : "uniform"}}},
      {"budget", {{"alpha", cfg.alpha}, {"delta", cfg.delta}}},
      {"grid_L", cfg.grid_L},
      {"evaluation",
       {{"cells", e.cells},
        {"inflation", e.inflation},
        {"steps", e.steps},
        {"probes_per_cell", e.probes_per_cell},
        {"pac_splits", e.pac_splits},
        {"sensitivity_sigmas", e.sensitivity_sigmas},
        {"christoffel_degrees", e.christoffel_degrees},
        {"christoffel_ridge", e.christoffel_ridge}}},
      {"output_dir", cfg.output_dir.string()},
  };
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::uint64_t config_hash(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  return crc64(j.dump());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace reachcal
