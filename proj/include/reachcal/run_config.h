#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reachcal/calibration.h"
#include "reachcal/datastore.h"
#include "reachcal/denoiser.h"
#include "reachcal/diffusion.h"
#include "reachcal/dynamics.h"

namespace reachcal {

struct ScheduleConfig {
  int T = 1000;
  double beta1 = 1e-4;
  double betaT = 0.02;
};

struct EvaluationConfig {
  int cells = 128;
  double inflation = 0.05;
  std::vector<int> steps;  // empty: every step
  int probes_per_cell = 8;
  std::size_t pac_splits = 100;
  std::vector<double> sensitivity_sigmas{0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
  std::vector<int> christoffel_degrees{2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
  double christoffel_ridge = -1.0;  // < 0: default relative ridge
};

struct RunConfig {
  SystemSpec system = DuffingSystem{};
  std::size_t N = 20000;
  std::size_t K = 30;
  double dt = 0.1;
  std::uint64_t seed = 0;
  SplitRatios split;
  DenoiserConfig denoiser;
  ScheduleConfig schedule;
  ScoreConfig score;
  double alpha = 0.05;
  double delta = 0.2;
  std::size_t grid_L = 2000;
  EvaluationConfig evaluation;
  std::filesystem::path output_dir = "out";

  void validate() const;
  // Sets the master seed and re-derives the stream seeds from it.
  void set_seed(std::uint64_t s);
  RiskBudget budget() const { return {alpha, delta, static_cast<int>(K)}; }
  NoiseSchedule make_noise_schedule() const;
  // Seeds of the training and score-noise streams, derived from `seed`.
  std::uint64_t train_seed() const;
  std::uint64_t score_seed() const;
  // Steps evaluated on a grid or in reports.
  std::vector<int> eval_steps() const;
};

// Unknown keys anywhere raise ConfigError naming the key path.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

// CRC-64 of the canonical JSON form of the resolved config.
std::uint64_t config_hash(const RunConfig& cfg);

std::string hex64(std::uint64_t v);

}  // namespace reachcal
