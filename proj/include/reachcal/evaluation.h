#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "reachcal/calibration.h"
#include "reachcal/datastore.h"

namespace reachcal {

// Uniform 2-D grid; cell (ix, iy) has flat index iy * cells[0] + ix.
struct GridSpec {
  std::array<double, 2> lower{0.0, 0.0};
  std::array<double, 2> upper{1.0, 1.0};
  std::array<int, 2> cells{128, 128};

  void validate() const;
  std::size_t size() const { return static_cast<std::size_t>(cells[0]) * cells[1]; }
  double width(int axis) const { return (upper[axis] - lower[axis]) / cells[axis]; }
  double cell_area() const { return width(0) * width(1); }
  Eigen::Vector2d center(std::size_t cell) const;
  std::optional<std::size_t> locate(double x, double y) const;
  bool operator==(const GridSpec&) const = default;
};

// Bounding box of the points (rows, 2 columns) grown by `inflation` of its
// extent, split into `cells` per axis.
GridSpec grid_from_points(const Eigen::MatrixXd& points, int cells = 128,
                          double inflation = 0.05);

struct MembershipMask {
  GridSpec grid;
  int k = 0;
  std::vector<std::uint8_t> cells;

  std::size_t count() const;
  bool operator[](std::size_t i) const { return cells[i] != 0; }
};

// Cell is true iff at least one point falls in it. More than 1% of points
// outside the grid raises GridTooSmallError.
MembershipMask build_reference_mask(const Eigen::MatrixXd& points, const GridSpec& grid,
                                    int k = 0, std::size_t* out_of_bounds = nullptr);

// Membership of each cell center; cell i is scored as (Domain::kGrid, i).
MembershipMask predict_mask(const ReachPredictor& predictor, int k, const GridSpec& grid);

// Membership on a 2-D coordinate projection of a higher-dimensional state.
// For each cell the `probes_per_cell` states nearest to the cell center in the
// projected coordinates are moved onto the center; the cell is true iff any of
// them is accepted.
MembershipMask predict_mask_projected(const ReachPredictor& predictor, int k,
                                      const GridSpec& grid, const Eigen::MatrixXd& probes,
                                      std::array<int, 2> dims, int probes_per_cell = 8);

struct MaskMetrics {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Empty denominators count as 1 when both masks are empty and 0 otherwise.
MaskMetrics iou_precision(const MembershipMask& pred, const MembershipMask& ref);

struct FnrReport {
  std::vector<double> per_step;
  double max = 0.0;
  double pooled = 0.0;
};

// Fraction of scores strictly above the step threshold.
FnrReport fnr_from_scores(const std::vector<std::vector<double>>& scores,
                          const std::vector<double>& thresholds);

// Scores trajectory ids of ds at every step (Domain::kTest, index = id).
std::vector<std::vector<double>> score_dataset(const ScoreFunction& score, const Dataset& ds,
                                               std::span<const std::size_t> ids,
                                               Domain domain);

FnrReport fnr(const ReachPredictor& predictor, const Dataset& ds,
              std::span<const std::size_t> test_ids);

struct PacSplitRecord {
  std::size_t split = 0;
  bool feasible = false;
  bool pass = false;
  double max_fnr = 1.0;
  std::string reason;
  std::vector<double> thresholds;
};

struct PacReport {
  double pass_rate = 0.0;
  std::vector<PacSplitRecord> splits;
};

// Cal/test re-splits of a fixed score pool (pool_scores[k][item]). Each split
// shuffles items with its own stream and calibrates on the first
// cal_fraction of them.
PacReport pac_validate(const std::vector<std::vector<double>>& pool_scores,
                       std::size_t n_splits, const RiskBudget& budget, std::size_t L,
                       std::uint64_t seed, double cal_fraction = 0.5);

// Permutation used by split s of pac_validate.
std::vector<std::size_t> pac_permutation(std::size_t items, std::uint64_t seed,
                                         std::size_t s);

struct VolumeBoundInput {
  double c0 = 0.25;
  double divergence = 0.02;  // J_k = exp(-divergence * t_k)
  double t = 0.0;
  double alpha = 0.05;

  void validate() const;
};

struct VolumeBound {
  double measured = 0.0;
  double bound = 0.0;
};

VolumeBound volume_bound_check(const MembershipMask& pred, const MembershipMask& ref,
                               const VolumeBoundInput& vb);

struct SensitivityPoint {
  double sigma = 0.0;
  double acceptance = 0.0;
};

// Acceptance rate of states (rows) perturbed by sigma * sigma_px * z, with
// z drawn once per state and shared across sigmas.
std::vector<SensitivityPoint> sensitivity_curve(const ReachPredictor& predictor,
                                                const Eigen::MatrixXd& states, int k,
                                                const Eigen::VectorXd& sigma_px,
                                                const std::vector<double>& sigmas,
                                                std::uint64_t seed);

struct MetricsRow {
  int k = 0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double fnr = 0.0;
  double q = 0.0;
  std::optional<double> bound;
  std::optional<double> measured;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
// Binary P5, 255 = member, first row is the top (largest y).
void write_pgm(const std::filesystem::path& path, const MembershipMask& mask);
void write_mask_cells_csv(const std::filesystem::path& path, const MembershipMask& mask);
void write_sensitivity_csv(const std::filesystem::path& path,
                           const std::vector<SensitivityPoint>& curve);

}  // namespace reachcal
