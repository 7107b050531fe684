// reachcal command-line tool: generate, train, calibrate, evaluate,
// pac-validate, sensitivity and baseline-christoffel stages over a run
// directory.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "reachcal/crc64.h"
#include "reachcal/errors.h"
#include "reachcal/parallel.h"
#include "reachcal/pipeline.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace reachcal {
namespace {

// Error raised by a stage, tagged with the artifact it concerns.
struct StageFailure {
  std::string stage;
  fs::path artifact;
  std::string message;
  int code;
};

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const StaleArtifactError*>(&e)) return 3;
  if (dynamic_cast<const CalibrationInfeasible*>(&e)) return 4;
  if (dynamic_cast<const FormatError*>(&e)) return 5;
  return 1;
}

template <class Fn>
auto guarded(const std::string& stage, const fs::path& artifact, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure{stage, artifact, e.what(), exit_code_for(e)};
  }
}

struct Paths {
  fs::path out;
  fs::path dataset() const { return out / "dataset.rchd"; }
  fs::path dataset_meta() const { return out / "dataset.json"; }
  fs::path model() const { return out / "model.ckpt"; }
  fs::path loss() const { return out / "loss.csv"; }
  fs::path calibration() const { return out / "calibration.json"; }
  fs::path metrics() const { return out / "metrics.csv"; }
  fs::path evaluation() const { return out / "evaluation.json"; }
  fs::path masks() const { return out / "masks"; }
  fs::path pac() const { return out / "pac.csv"; }
  fs::path pac_summary() const { return out / "pac.json"; }
  fs::path sensitivity() const { return out / "sensitivity.csv"; }
  fs::path christoffel() const { return out / "christoffel.csv"; }
};

struct Context {
  RunConfig cfg;
  Paths paths;
  std::vector<fs::path> written;

  void wrote(const fs::path& p) {
    if (std::find(written.begin(), written.end(), p) == written.end()) written.push_back(p);
  }
};

std::uint64_t file_crc(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  return crc64(std::as_bytes(std::span<const char>(bytes)));
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string(), 0);
  out << j.dump(2) << "\n";
}

json provenance(const Context& ctx) {
  return {{"config_hash", hex64(config_hash(ctx.cfg))},
          {"seed", ctx.cfg.seed},
          {"train_seed", ctx.cfg.train_seed()},
          {"score_seed", ctx.cfg.score_seed()}};
}

// Loaded dataset plus the CRC-64 of its file.
struct LoadedDataset {
  Dataset ds;
  std::uint64_t crc = 0;
  SplitIndex split;
};

LoadedDataset load_run_dataset(const Context& ctx) {
  const auto path = ctx.paths.dataset();
  return guarded("load dataset", path, [&] {
    LoadedDataset d;
    d.ds = load_dataset(path);
    d.crc = file_crc(path);
    if (d.ds.K != ctx.cfg.K || d.ds.n != state_dim(ctx.cfg.system)) {
      throw StaleArtifactError("dataset shape does not match the config (rerun generate)");
    }
    d.split = run_split(ctx.cfg, d.ds);
    return d;
  });
}

std::shared_ptr<const DenoiserModel> load_run_model(const Context& ctx, const LoadedDataset& d) {
  const auto path = ctx.paths.model();
  return guarded("load model", path, [&] {
    auto model = std::make_shared<const DenoiserModel>(load_checkpoint(path));
    const auto it = model->provenance.find("dataset_crc");
    if (it == model->provenance.end() || it->second != hex64(d.crc)) {
      throw StaleArtifactError("checkpoint was trained on a different dataset (rerun train)");
    }
    if (model->K != static_cast<int>(d.ds.K) || model->n != d.ds.n) {
      throw StaleArtifactError("checkpoint shape does not match the dataset (rerun train)");
    }
    return model;
  });
}

// Calibrated predictor with every upstream hash checked.
struct Calibrated {
  LoadedDataset data;
  std::shared_ptr<const DenoiserModel> model;
  std::shared_ptr<const DiffusionScore> score;
  CalibrationResult calibration;
};

Calibrated load_calibrated(const Context& ctx) {
  Calibrated c;
  c.data = load_run_dataset(ctx);
  c.model = load_run_model(ctx, c.data);
  c.score = guarded("load model", ctx.paths.model(),
                    [&] { return make_diffusion_score(ctx.cfg, c.model); });
  const auto path = ctx.paths.calibration();
  c.calibration = guarded("load calibration", path, [&] {
    auto cal = load_calibration(path);
    if (cal.model_hash != c.model->param_hash()) {
      throw StaleArtifactError("calibration was computed for a different model (rerun calibrate)");
    }
    if (cal.score_hash != score_hash(ctx.cfg)) {
      throw StaleArtifactError("score settings changed since calibration (rerun calibrate)");
    }
    const auto it = cal.provenance.find("dataset_crc");
    if (it == cal.provenance.end() || it->second != hex64(c.data.crc)) {
      throw StaleArtifactError("calibration was computed on a different dataset");
    }
    if (cal.budget.alpha != ctx.cfg.alpha || cal.budget.delta != ctx.cfg.delta) {
      throw StaleArtifactError("risk budget changed since calibration (rerun calibrate)");
    }
    require_feasible(cal);
    return cal;
  });
  return c;
}

void cmd_generate(Context& ctx) {
  const auto path = ctx.paths.dataset();
  guarded("generate", path, [&] {
    const Dataset ds = run_generate(ctx.cfg);
    save_dataset(ds, path);
    json meta = provenance(ctx);
    meta["system"] = system_tag(ctx.cfg.system);
    meta["N"] = ds.N;
    meta["K"] = ds.K;
    meta["n"] = ds.n;
    meta["dt"] = ds.dt;
    meta["dataset_crc"] = hex64(file_crc(path));
    write_json(ctx.paths.dataset_meta(), meta);
  });
  ctx.wrote(path);
  ctx.wrote(ctx.paths.dataset_meta());
}

void cmd_train(Context& ctx) {
  const auto d = load_run_dataset(ctx);
  const auto path = ctx.paths.model();
  guarded("train", path, [&] {
    TrainOptions opts;
    opts.on_epoch = [&](int epoch, double loss) {
      spdlog::info("epoch {}/{} loss {:.6f}", epoch + 1, ctx.cfg.denoiser.epochs, loss);
    };
    const auto model = run_train(ctx.cfg, d.ds, d.split.train_ids, d.crc, opts);
    save_checkpoint(model, path);
    write_loss_csv(ctx.paths.loss(), model.loss_curve);
  });
  ctx.wrote(path);
  ctx.wrote(ctx.paths.loss());
}

void cmd_calibrate(Context& ctx) {
  const auto d = load_run_dataset(ctx);
  const auto model = load_run_model(ctx, d);
  const auto path = ctx.paths.calibration();
  guarded("calibrate", path, [&] {
    const auto score = make_diffusion_score(ctx.cfg, model);
    auto cal = run_calibrate(ctx.cfg, *score, d.ds, d.split.cal_ids);
    cal.model_hash = model->param_hash();
    cal.provenance["dataset_crc"] = hex64(d.crc);
    cal.provenance["train_seed"] = std::to_string(ctx.cfg.train_seed());
    save_calibration(cal, path);
  });
  ctx.wrote(path);
}

std::string step_tag(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "k%03d", k);
  return buf;
}

void write_report(Context& ctx, const EvaluationReport& rep, const fs::path& metrics,
                  const fs::path& summary, const std::string& mask_prefix) {
  write_metrics_csv(metrics, rep.rows);
  ctx.wrote(metrics);
  if (!rep.predicted.empty()) fs::create_directories(ctx.paths.masks());
  for (std::size_t i = 0; i < rep.predicted.size(); ++i) {
    const auto tag = step_tag(rep.predicted[i].k);
    const auto dir = ctx.paths.masks();
    const fs::path files[] = {dir / (mask_prefix + "pred_" + tag + ".pgm"),
                              dir / (mask_prefix + "pred_" + tag + ".csv"),
                              dir / ("ref_" + tag + ".pgm"), dir / ("ref_" + tag + ".csv")};
    write_pgm(files[0], rep.predicted[i]);
    write_mask_cells_csv(files[1], rep.predicted[i]);
    write_pgm(files[2], rep.reference[i]);
    write_mask_cells_csv(files[3], rep.reference[i]);
    for (const auto& f : files) ctx.wrote(f);
  }
  json j = provenance(ctx);
  j["fnr_per_step"] = rep.fnr.per_step;
  j["fnr_max"] = rep.fnr.max;
  j["fnr_pooled"] = rep.fnr.pooled;
  j["mean_iou"] = rep.mean_iou ? json(*rep.mean_iou) : json(nullptr);
  write_json(summary, j);
  ctx.wrote(summary);
}

void cmd_evaluate(Context& ctx) {
  const auto c = load_calibrated(ctx);
  guarded("evaluate", ctx.paths.metrics(), [&] {
    const ReachPredictor predictor(c.score, c.calibration);
    const auto rep = run_evaluate(ctx.cfg, predictor, c.data.ds, c.data.split.test_ids);
    write_report(ctx, rep, ctx.paths.metrics(), ctx.paths.evaluation(), "");
    spdlog::info("max test FNR {:.4f}", rep.fnr.max);
  });
}

void cmd_pac_validate(Context& ctx) {
  const auto c = load_calibrated(ctx);
  guarded("pac-validate", ctx.paths.pac(), [&] {
    std::vector<std::size_t> pool = c.data.split.cal_ids;
    pool.insert(pool.end(), c.data.split.test_ids.begin(), c.data.split.test_ids.end());
    std::sort(pool.begin(), pool.end());
    const auto rep = run_pac_validate(ctx.cfg, *c.score, c.data.ds, pool);
    std::ofstream out(ctx.paths.pac());
    out << "split,feasible,pass,max_fnr,reason\n";
    out.precision(10);
    for (const auto& s : rep.splits) {
      std::string reason = s.reason;
      std::replace(reason.begin(), reason.end(), ',', ';');
      out << s.split << ',' << s.feasible << ',' << s.pass << ',' << s.max_fnr << ',' << reason
          << '\n';
    }
    json j = provenance(ctx);
    j["splits"] = rep.splits.size();
    j["pool"] = pool.size();
    j["pass_rate"] = rep.pass_rate;
    write_json(ctx.paths.pac_summary(), j);
    spdlog::info("pass rate {:.3f}", rep.pass_rate);
  });
  ctx.wrote(ctx.paths.pac());
  ctx.wrote(ctx.paths.pac_summary());
}

void cmd_sensitivity(Context& ctx) {
  const auto c = load_calibrated(ctx);
  guarded("sensitivity", ctx.paths.sensitivity(), [&] {
    const ReachPredictor predictor(c.score, c.calibration);
    const auto curve = run_sensitivity(ctx.cfg, predictor, c.data.ds, c.data.split.test_ids,
                                       c.model->normalizer.std());
    write_sensitivity_csv(ctx.paths.sensitivity(), curve);
  });
  ctx.wrote(ctx.paths.sensitivity());
}

void cmd_baseline_christoffel(Context& ctx) {
  const auto d = load_run_dataset(ctx);
  guarded("baseline-christoffel", ctx.paths.christoffel(), [&] {
    std::ofstream out(ctx.paths.christoffel());
    out << "degree,status,mean_iou,max_fnr\n";
    out.precision(10);
    for (int degree : ctx.cfg.evaluation.christoffel_degrees) {
      out << degree << ',';
      try {
        const auto run = run_christoffel(ctx.cfg, d.ds, d.split, degree);
        if (!run.calibration.feasible()) {
          out << "infeasible,,\n";
          continue;
        }
        const auto& rep = run.evaluation;
        out << "ok," << (rep.mean_iou ? std::to_string(*rep.mean_iou) : std::string()) << ','
            << rep.fnr.max << '\n';
        const auto tag = "christoffel_d" + std::to_string(degree);
        write_report(ctx, rep, ctx.paths.out / (tag + "_metrics.csv"),
                     ctx.paths.out / (tag + ".json"), tag + "_");
        spdlog::info("christoffel d={} mean IoU {}", degree,
                     rep.mean_iou ? *rep.mean_iou : std::nan(""));
      } catch (const NumericError& e) {
        out << "singular,,\n";
        spdlog::warn("christoffel d={}: {}", degree, e.what());
      }
    }
  });
  ctx.wrote(ctx.paths.christoffel());
}

void configure_logging() {
  const char* env = std::getenv("REACHCAL_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("REACHCAL_LOG='{}' not recognized, using info", level);
  }
}

}  // namespace
}  // namespace reachcal

int main(int argc, char** argv) {
  using namespace reachcal;
  configure_logging();

  CLI::App app{"Data-driven reachability with calibrated diffusion scores"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory (overrides output_dir)");
  app.add_option("--seed", seed, "Master seed (overrides seed)");
  app.add_option("--threads", threads, "Worker cap (0 = all cores)");

  const std::vector<std::pair<std::string, void (*)(Context&)>> commands{
      {"generate", cmd_generate},
      {"train", cmd_train},
      {"calibrate", cmd_calibrate},
      {"evaluate", cmd_evaluate},
      {"pac-validate", cmd_pac_validate},
      {"sensitivity", cmd_sensitivity},
      {"baseline-christoffel", cmd_baseline_christoffel},
  };
  const std::map<std::string, std::string> help{
      {"generate", "Simulate the trajectory dataset"},
      {"train", "Train the denoiser on the training split"},
      {"calibrate", "Calibrate per-step thresholds on the calibration split"},
      {"evaluate", "Test FNR, masks, IoU and volume bound"},
      {"pac-validate", "Repeated calibration/test re-splits of the held-out pool"},
      {"sensitivity", "Acceptance rate under scaled perturbations"},
      {"baseline-christoffel", "Christoffel-function baseline over the configured degrees"},
  };
  for (const auto& [name, fn] : commands) app.add_subcommand(name, help.at(name));

  CLI11_PARSE(app, argc, argv);

  Context ctx;
  try {
    ctx.cfg = guarded("config", config_path, [&] { return load_run_config(config_path); });
    if (seed) ctx.cfg.set_seed(*seed);
    if (!out_dir.empty()) ctx.cfg.output_dir = out_dir;
    set_max_threads(threads);
    ctx.paths.out = ctx.cfg.output_dir;
    guarded("config", ctx.paths.out, [&] { fs::create_directories(ctx.paths.out); });
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) fn(ctx);
    }
  } catch (const StageFailure& f) {
    std::cerr << "reachcal: " << f.stage << " failed [" << f.artifact.string() << "]: " << f.message
              << "\n";
    return f.code;
  }
  for (const auto& p : ctx.written) std::cout << p.string() << "\n";
  return 0;
}
