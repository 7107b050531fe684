#include "reachcal/pipeline.h"

#include <cmath>
#include <fstream>
#include <limits>

#include <spdlog/spdlog.h>

#include "reachcal/crc64.h"
#include "reachcal/errors.h"
#include "reachcal/random.h"

namespace reachcal {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_planar(const RunConfig& cfg) { return std::holds_alternative<DuffingSystem>(cfg.system); }
bool is_quadrotor(const RunConfig& cfg) {
  return std::holds_alternative<QuadrotorSystem>(cfg.system);
}

}  // namespace

Dataset run_generate(const RunConfig& cfg) {
  cfg.validate();
  spdlog::info("generating {} {} trajectories (K={})", cfg.N, system_tag(cfg.system), cfg.K);
  return generate_dataset(cfg.system, cfg.N, cfg.K, cfg.dt, cfg.seed);
}

SplitIndex run_split(const RunConfig& cfg, const Dataset& ds) {
  return split(ds, cfg.split, cfg.seed);
}

DenoiserModel run_train(const RunConfig& cfg, const Dataset& ds,
                        std::span<const std::size_t> train_ids, std::uint64_t dataset_crc,
                        const TrainOptions& options) {
  auto model = train(ds, train_ids, cfg.make_noise_schedule(), cfg.denoiser, options);
  model.provenance["config_hash"] = hex64(config_hash(cfg));
  model.provenance["dataset_crc"] = hex64(dataset_crc);
  model.provenance["seed"] = std::to_string(cfg.seed);
  model.provenance["train_seed"] = std::to_string(cfg.denoiser.seed);
  return model;
}

std::uint64_t score_hash(const RunConfig& cfg) {
  const std::uint64_t words[] = {cfg.score.hash(), cfg.make_noise_schedule().hash()};
  return crc64(std::as_bytes(std::span<const std::uint64_t>(words)));
}

std::shared_ptr<const DiffusionScore> make_diffusion_score(
    const RunConfig& cfg, std::shared_ptr<const DenoiserModel> model) {
  const auto schedule = cfg.make_noise_schedule();
  if (model->schedule_hash != schedule.hash()) {
    throw StaleArtifactError("checkpoint was trained with a different noise schedule");
  }
  auto predictor = std::make_shared<DenoiserPredictor>(model, cfg.score.taus);
  return std::make_shared<DiffusionScore>(predictor, model->normalizer, schedule, cfg.score);
}

CalibrationResult run_calibrate(const RunConfig& cfg, const ScoreFunction& score,
                                const Dataset& ds, std::span<const std::size_t> cal_ids) {
  const auto scores = score_dataset(score, ds, cal_ids, Domain::kCalibration);
  auto result = calibrate_all(scores, cfg.budget(), cfg.grid_L);
  result.score_hash = score_hash(cfg);
  result.provenance["config_hash"] = hex64(config_hash(cfg));
  result.provenance["seed"] = std::to_string(cfg.seed);
  result.provenance["score_seed"] = std::to_string(cfg.score.seed);
  return result;
}

EvaluationReport run_evaluate(const RunConfig& cfg, const ReachPredictor& predictor,
                              const Dataset& ds, std::span<const std::size_t> test_ids,
                              const std::vector<std::vector<double>>* test_scores) {
  EvaluationReport rep;
  std::vector<std::vector<double>> own;
  if (!test_scores) {
    own = score_dataset(predictor.score_function(), ds, test_ids, Domain::kTest);
    test_scores = &own;
  }
  const auto q = predictor.calibration().thresholds();
  rep.fnr = fnr_from_scores(*test_scores, q);

  double iou_sum = 0.0;
  for (int k : cfg.eval_steps()) {
    const auto ku = static_cast<std::size_t>(k);
    MetricsRow row;
    row.k = k;
    row.fnr = rep.fnr.per_step[ku];
    row.q = q[ku];
    row.iou = row.precision = row.recall = kNaN;
    if (is_planar(cfg) || is_quadrotor(cfg)) {
      const Eigen::MatrixXd full = ds.step_matrix(test_ids, ku);
      const Eigen::MatrixXd pts = full.leftCols(2);
      const GridSpec grid = grid_from_points(pts, cfg.evaluation.cells, cfg.evaluation.inflation);
      auto ref = build_reference_mask(pts, grid, k);
      auto pred = is_planar(cfg)
                      ? predict_mask(predictor, k, grid)
                      : predict_mask_projected(predictor, k, grid, full, {0, 1},
                                               cfg.evaluation.probes_per_cell);
      const auto m = iou_precision(pred, ref);
      row.iou = m.iou;
      row.precision = m.precision;
      row.recall = m.recall;
      iou_sum += m.iou;
      if (is_planar(cfg)) {
        const auto& p = std::get<DuffingSystem>(cfg.system).params;
        VolumeBoundInput vb{1.0 / p.x0_box.volume(), p.c, k * ds.dt, cfg.alpha};
        const auto v = volume_bound_check(pred, ref, vb);
        row.bound = v.bound;
        row.measured = v.measured;
      }
      rep.predicted.push_back(std::move(pred));
      rep.reference.push_back(std::move(ref));
    }
    rep.rows.push_back(row);
  }
  if (!rep.predicted.empty()) rep.mean_iou = iou_sum / static_cast<double>(rep.predicted.size());
  return rep;
}

PacReport run_pac_validate(const RunConfig& cfg, const ScoreFunction& score, const Dataset& ds,
                           std::span<const std::size_t> pool_ids) {
  const auto pool = score_dataset(score, ds, pool_ids, Domain::kPool);
  return pac_validate(pool, cfg.evaluation.pac_splits, cfg.budget(), cfg.grid_L,
                      derive_key({cfg.seed, 0x9AC0}));
}

std::vector<SensitivityPoint> run_sensitivity(const RunConfig& cfg,
                                              const ReachPredictor& predictor,
                                              const Dataset& ds,
                                              std::span<const std::size_t> test_ids,
                                              const Eigen::VectorXd& sigma_px) {
  const auto& sigmas = cfg.evaluation.sensitivity_sigmas;
  std::vector<SensitivityPoint> total(sigmas.size());
  std::size_t states = 0;
  for (int k : cfg.eval_steps()) {
    const Eigen::MatrixXd xs = ds.step_matrix(test_ids, static_cast<std::size_t>(k));
    const auto curve = sensitivity_curve(predictor, xs, k, sigma_px, sigmas,
                                         derive_key({cfg.seed, 0x5E45, static_cast<std::uint64_t>(k)}));
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      total[i].sigma = sigmas[i];
      total[i].acceptance += curve[i].acceptance * static_cast<double>(xs.rows());
    }
    states += static_cast<std::size_t>(xs.rows());
  }
  for (auto& p : total) p.acceptance /= static_cast<double>(std::max<std::size_t>(1, states));
  return total;
}

ChristoffelRun run_christoffel(const RunConfig& cfg, const Dataset& ds, const SplitIndex& split,
                               int degree) {
  if (ds.n > 6) {
    throw ConfigError("Christoffel baseline is limited to states of dimension <= 6 (got " +
                      std::to_string(ds.n) + ")");
  }
  std::vector<ChristoffelModel> models;
  for (std::size_t k = 0; k < ds.K; ++k) {
    models.push_back(christoffel_fit(ds.step_matrix(split.train_ids, k), degree,
                                     cfg.evaluation.christoffel_ridge));
  }
  ChristoffelRun run;
  run.degree = degree;
  run.score = std::make_shared<ChristoffelScore>(std::move(models), ds.n);
  const auto cal = score_dataset(*run.score, ds, split.cal_ids, Domain::kCalibration);
  run.calibration = calibrate_scores(cal, cfg.budget(), cfg.grid_L);
  run.calibration.provenance["score"] = "christoffel";
  run.calibration.provenance["degree"] = std::to_string(degree);
  if (run.calibration.feasible()) {
    ReachPredictor predictor(run.score, run.calibration);
    run.evaluation = run_evaluate(cfg, predictor, ds, split.test_ids);
  }
  return run;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& loss_curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.precision(10);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < loss_curve.size(); ++e) out << e << ',' << loss_curve[e] << '\n';
}

}  // namespace reachcal
