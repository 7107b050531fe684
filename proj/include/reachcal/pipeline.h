#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reachcal/calibration.h"
#include "reachcal/christoffel.h"
#include "reachcal/datastore.h"
#include "reachcal/denoiser.h"
#include "reachcal/diffusion.h"
#include "reachcal/evaluation.h"
#include "reachcal/run_config.h"

namespace reachcal {

// Stages shared by the command-line tool, the Python module and the
// acceptance runs. Each is a pure function of its inputs.

Dataset run_generate(const RunConfig& cfg);
SplitIndex run_split(const RunConfig& cfg, const Dataset& ds);

DenoiserModel run_train(const RunConfig& cfg, const Dataset& ds,
                        std::span<const std::size_t> train_ids, std::uint64_t dataset_crc,
                        const TrainOptions& options = {});

// Hash of everything the score depends on besides the model parameters.
std::uint64_t score_hash(const RunConfig& cfg);

std::shared_ptr<const DiffusionScore> make_diffusion_score(
    const RunConfig& cfg, std::shared_ptr<const DenoiserModel> model);

// Scores calibration trajectories (Domain::kCalibration) and runs LTT on each
// step; infeasible steps raise CalibrationInfeasible.
CalibrationResult run_calibrate(const RunConfig& cfg, const ScoreFunction& score,
                                const Dataset& ds, std::span<const std::size_t> cal_ids);

struct EvaluationReport {
  FnrReport fnr;
  std::vector<MetricsRow> rows;  // one per evaluated step
  std::vector<MembershipMask> predicted;
  std::vector<MembershipMask> reference;
  std::optional<double> mean_iou;  // over masked steps
};

// FNR over every step, and masks/IoU/volume bound on the evaluated steps
// (planar systems directly, the quadrotor on its (x, h) projection).
// test_scores may carry precomputed Domain::kTest scores of test_ids.
EvaluationReport run_evaluate(const RunConfig& cfg, const ReachPredictor& predictor,
                              const Dataset& ds, std::span<const std::size_t> test_ids,
                              const std::vector<std::vector<double>>* test_scores = nullptr);

// Scores pool_ids once (Domain::kPool) and re-splits them cfg.evaluation.pac_splits times.
PacReport run_pac_validate(const RunConfig& cfg, const ScoreFunction& score, const Dataset& ds,
                           std::span<const std::size_t> pool_ids);

// Acceptance rate of perturbed test states pooled over the evaluated steps;
// sigma_px is the per-dimension data scale.
std::vector<SensitivityPoint> run_sensitivity(const RunConfig& cfg,
                                              const ReachPredictor& predictor,
                                              const Dataset& ds,
                                              std::span<const std::size_t> test_ids,
                                              const Eigen::VectorXd& sigma_px);

struct ChristoffelRun {
  int degree = 0;
  std::shared_ptr<const ChristoffelScore> score;
  CalibrationResult calibration;
  EvaluationReport evaluation;
};

// Fits per-step Christoffel models on the training trajectories and calibrates
// them like the diffusion score. An infeasible calibration is returned with
// an empty evaluation.
ChristoffelRun run_christoffel(const RunConfig& cfg, const Dataset& ds, const SplitIndex& split,
                               int degree);

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& loss_curve);

}  // namespace reachcal
