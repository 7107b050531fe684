#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reachcal/score_function.h"

namespace reachcal {

struct RiskBudget {
  double alpha = 0.05;
  double delta = 0.2;
  int K = 1;

  double per_step() const { return delta / K; }
  void validate() const;
};

// Fraction of scores strictly greater than lambda.
double empirical_risk(std::span<const double> scores, double lambda);

// exp(-n h1(min(r_hat, alpha), alpha)), h1 the Bernoulli relative entropy.
double hoeffding_term(double r_hat, std::size_t n, double alpha);
// log P[Bin(n, alpha) <= m] by log-space summation of the pmf.
long double binomial_log_cdf(std::size_t m, std::size_t n, double alpha);

// Hoeffding-Bentkus p-value for H0: risk > alpha, clipped to (0, 1].
double hb_pvalue(double r_hat, std::size_t n, double alpha);
// Same, with the exceedance count given exactly (r_hat = exceed / n).
double hb_pvalue_count(std::size_t exceed, std::size_t n, double alpha);

// Precomputed p-values for every exceedance count 0..n at fixed (n, alpha).
class HbTable {
 public:
  HbTable(std::size_t n, double alpha);
  double pvalue(std::size_t exceed) const { return pvalues_.at(exceed); }
  std::size_t n() const { return n_; }

 private:
  std::size_t n_;
  std::vector<double> pvalues_;
};

// Smallest n whose zero-risk p-value (1 - alpha)^n is <= per_step_budget.
std::size_t min_calibration_size(double alpha, double per_step_budget);

struct ThresholdGrid {
  int k = 0;
  std::vector<double> values;  // strictly ascending
};

// L equally spaced thresholds from min to max of the step-k scores.
ThresholdGrid build_grid(std::span<const double> scores, std::size_t L, int k = 0);

// First grid value whose p-value is <= budget.
std::optional<double> select_threshold(const ThresholdGrid& grid,
                                       std::span<const double> p_values,
                                       double budget);

struct StepCalibration {
  int k = 0;
  std::size_t n = 0;
  ThresholdGrid grid;
  std::vector<double> risks;
  std::vector<double> p_values;
  std::optional<double> q;
};

// Evaluates risks and p-values along the grid and selects the threshold.
StepCalibration select_threshold(const ThresholdGrid& grid,
                                 std::span<const double> cal_scores,
                                 const RiskBudget& budget);

struct CalibrationResult {
  RiskBudget budget;
  std::vector<StepCalibration> steps;
  std::uint64_t score_hash = 0;
  std::uint64_t model_hash = 0;
  std::map<std::string, std::string> provenance;

  bool feasible() const;
  double threshold(int k) const;  // throws ContractViolation when absent
  std::vector<double> thresholds() const;
};

// Per-step LTT over precomputed calibration scores (one vector per k) with
// per-step budget delta / K. Infeasible steps keep q empty.
CalibrationResult calibrate_scores(const std::vector<std::vector<double>>& scores,
                                   const RiskBudget& budget, std::size_t L);

// As calibrate_scores, but a step without an admissible threshold raises
// CalibrationInfeasible with the minimum calibration size needed.
CalibrationResult calibrate_all(const std::vector<std::vector<double>>& scores,
                                const RiskBudget& budget, std::size_t L);

void require_feasible(const CalibrationResult& result);

nlohmann::json to_json(const CalibrationResult& result);
CalibrationResult calibration_from_json(const nlohmann::json& j);
void save_calibration(const CalibrationResult& result, const std::filesystem::path& path);
CalibrationResult load_calibration(const std::filesystem::path& path);

// Sublevel-set membership x in R(t_k) iff s(x, k) <= q_k.
class ReachPredictor {
 public:
  struct Decision {
    bool member = false;
    double score = 0.0;
  };

  ReachPredictor(std::shared_ptr<const ScoreFunction> score,
                 CalibrationResult calibration);

  Decision membership(std::span<const double> x, int k, Domain domain = Domain::kAdhoc,
                      std::uint64_t index = 0) const;
  std::vector<Decision> membership_rows(const Eigen::MatrixXd& states, int k,
                                        Domain domain, std::uint64_t first_index) const;

  const ScoreFunction& score_function() const { return *score_; }
  const CalibrationResult& calibration() const { return calibration_; }

 private:
  std::shared_ptr<const ScoreFunction> score_;
  CalibrationResult calibration_;
};

}  // namespace reachcal
