#include "reachcal/evaluation.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "reachcal/errors.h"
#include "reachcal/parallel.h"
#include "reachcal/random.h"

namespace reachcal {
namespace {

std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

double ratio(std::size_t num, std::size_t den, bool both_empty) {
  if (den == 0) return both_empty ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

void GridSpec::validate() const {
  for (int a = 0; a < 2; ++a) {
    if (cells[a] < 2) throw ContractViolation("GridSpec: need at least 2 cells per axis");
    if (!std::isfinite(lower[a]) || !std::isfinite(upper[a]) || !(upper[a] > lower[a])) {
      throw ContractViolation("GridSpec: bounds must be finite with upper > lower");
    }
  }
}

Eigen::Vector2d GridSpec::center(std::size_t cell) const {
  const auto ix = static_cast<int>(cell % static_cast<std::size_t>(cells[0]));
  const auto iy = static_cast<int>(cell / static_cast<std::size_t>(cells[0]));
  return {lower[0] + (ix + 0.5) * width(0), lower[1] + (iy + 0.5) * width(1)};
}

std::optional<std::size_t> GridSpec::locate(double x, double y) const {
  if (!(x >= lower[0] && x <= upper[0] && y >= lower[1] && y <= upper[1])) return std::nullopt;
  const int ix = std::min(cells[0] - 1, static_cast<int>((x - lower[0]) / width(0)));
  const int iy = std::min(cells[1] - 1, static_cast<int>((y - lower[1]) / width(1)));
  return static_cast<std::size_t>(iy) * cells[0] + ix;
}

GridSpec grid_from_points(const Eigen::MatrixXd& points, int cells, double inflation) {
  if (points.cols() != 2 || points.rows() < 1) {
    throw ContractViolation("grid_from_points: need at least one 2-D point");
  }
  GridSpec g;
  for (int a = 0; a < 2; ++a) {
    double lo = points.col(a).minCoeff();
    double hi = points.col(a).maxCoeff();
    double pad = 0.5 * inflation * (hi - lo);
    if (!(hi - lo > 0)) pad = std::max(1e-6, 1e-3 * std::abs(lo));
    g.lower[a] = lo - pad;
    g.upper[a] = hi + pad;
    g.cells[a] = cells;
  }
  g.validate();
  return g;
}

std::size_t MembershipMask::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

MembershipMask build_reference_mask(const Eigen::MatrixXd& points, const GridSpec& grid, int k,
                                    std::size_t* out_of_bounds) {
  grid.validate();
  if (points.rows() > 0 && points.cols() != 2) {
    throw ContractViolation("build_reference_mask: points must have 2 columns");
  }
  MembershipMask mask{grid, k, std::vector<std::uint8_t>(grid.size(), 0)};
  std::size_t outside = 0;
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    if (auto cell = grid.locate(points(r, 0), points(r, 1))) {
      mask.cells[*cell] = 1;
    } else {
      ++outside;
    }
  }
  if (out_of_bounds) *out_of_bounds = outside;
  if (static_cast<double>(outside) > 0.01 * static_cast<double>(points.rows())) {
    throw GridTooSmallError("build_reference_mask: " + std::to_string(outside) + " of " +
                            std::to_string(points.rows()) + " states at step " +
                            std::to_string(k) + " fall outside the grid");
  }
  return mask;
}

MembershipMask predict_mask(const ReachPredictor& predictor, int k, const GridSpec& grid) {
  grid.validate();
  if (predictor.score_function().dim() != 2) {
    throw ContractViolation("predict_mask: state must be 2-D; use predict_mask_projected");
  }
  Eigen::MatrixXd centers(static_cast<Eigen::Index>(grid.size()), 2);
  for (std::size_t c = 0; c < grid.size(); ++c) {
    centers.row(static_cast<Eigen::Index>(c)) = grid.center(c).transpose();
  }
  const auto decisions = predictor.membership_rows(centers, k, Domain::kGrid, 0);
  MembershipMask mask{grid, k, std::vector<std::uint8_t>(grid.size(), 0)};
  for (std::size_t c = 0; c < grid.size(); ++c) mask.cells[c] = decisions[c].member ? 1 : 0;
  return mask;
}

MembershipMask predict_mask_projected(const ReachPredictor& predictor, int k,
                                      const GridSpec& grid, const Eigen::MatrixXd& probes,
                                      std::array<int, 2> dims, int probes_per_cell) {
  grid.validate();
  const auto m = static_cast<std::size_t>(probes.rows());
  if (m == 0 || probes_per_cell < 1) {
    throw ContractViolation("predict_mask_projected: need probes and probes_per_cell >= 1");
  }
  const auto P = std::min<std::size_t>(static_cast<std::size_t>(probes_per_cell), m);
  const Eigen::Index n = probes.cols();
  Eigen::MatrixXd queries(static_cast<Eigen::Index>(grid.size() * P), n);
  parallel_for(grid.size(), [&](std::size_t c0, std::size_t c1) {
    std::vector<std::pair<double, std::size_t>> dist(m);
    for (std::size_t c = c0; c < c1; ++c) {
      const Eigen::Vector2d ctr = grid.center(c);
      for (std::size_t i = 0; i < m; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const double dx = probes(r, dims[0]) - ctr[0];
        const double dy = probes(r, dims[1]) - ctr[1];
        dist[i] = {dx * dx + dy * dy, i};
      }
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(P), dist.end());
      for (std::size_t j = 0; j < P; ++j) {
        const auto row = static_cast<Eigen::Index>(c * P + j);
        queries.row(row) = probes.row(static_cast<Eigen::Index>(dist[j].second));
        queries(row, dims[0]) = ctr[0];
        queries(row, dims[1]) = ctr[1];
      }
    }
  }, 64);
  const auto decisions = predictor.membership_rows(queries, k, Domain::kProbe, 0);
  MembershipMask mask{grid, k, std::vector<std::uint8_t>(grid.size(), 0)};
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (std::size_t j = 0; j < P; ++j) {
      if (decisions[c * P + j].member) {
        mask.cells[c] = 1;
        break;
      }
    }
  }
  return mask;
}

MaskMetrics iou_precision(const MembershipMask& pred, const MembershipMask& ref) {
  if (!(pred.grid == ref.grid) || pred.cells.size() != ref.cells.size()) {
    throw ContractViolation("iou_precision: masks are on different grids");
  }
  std::size_t inter = 0, uni = 0, np = 0, nr = 0;
  for (std::size_t i = 0; i < pred.cells.size(); ++i) {
    const bool a = pred.cells[i] != 0;
    const bool b = ref.cells[i] != 0;
    inter += a && b;
    uni += a || b;
    np += a;
    nr += b;
  }
  const bool both_empty = np == 0 && nr == 0;
  return {ratio(inter, uni, both_empty), ratio(inter, np, both_empty),
          ratio(inter, nr, both_empty)};
}

FnrReport fnr_from_scores(const std::vector<std::vector<double>>& scores,
                          const std::vector<double>& thresholds) {
  if (scores.size() != thresholds.size()) {
    throw ContractViolation("fnr_from_scores: one threshold per step required");
  }
  FnrReport rep;
  std::size_t missed = 0, total = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const auto& s = scores[k];
    const auto miss = static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [&](double v) { return v > thresholds[k]; }));
    const double f = s.empty() ? 0.0 : static_cast<double>(miss) / static_cast<double>(s.size());
    rep.per_step.push_back(f);
    rep.max = std::max(rep.max, f);
    missed += miss;
    total += s.size();
  }
  rep.pooled = total ? static_cast<double>(missed) / static_cast<double>(total) : 0.0;
  return rep;
}

std::vector<std::vector<double>> score_dataset(const ScoreFunction& score, const Dataset& ds,
                                               std::span<const std::size_t> ids,
                                               Domain domain) {
  std::vector<std::vector<double>> out(ds.K);
  for (std::size_t k = 0; k < ds.K; ++k) {
    const Eigen::MatrixXd xs = ds.step_matrix(ids, k);
    // Index each query by its trajectory id so a state keeps its noise stream
    // however the ids are partitioned.
    std::vector<double> s(ids.size());
    std::size_t r = 0;
    while (r < ids.size()) {
      std::size_t e = r + 1;
      while (e < ids.size() && ids[e] == ids[e - 1] + 1) ++e;
      auto part = score.score(xs.middleRows(static_cast<Eigen::Index>(r),
                                            static_cast<Eigen::Index>(e - r)),
                              static_cast<int>(k), domain, ids[r]);
      std::copy(part.begin(), part.end(), s.begin() + static_cast<std::ptrdiff_t>(r));
      r = e;
    }
    out[k] = std::move(s);
  }
  return out;
}

FnrReport fnr(const ReachPredictor& predictor, const Dataset& ds,
              std::span<const std::size_t> test_ids) {
  auto scores = score_dataset(predictor.score_function(), ds, test_ids, Domain::kTest);
  return fnr_from_scores(scores, predictor.calibration().thresholds());
}

std::vector<std::size_t> pac_permutation(std::size_t items, std::uint64_t seed, std::size_t s) {
  std::vector<std::size_t> perm(items);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(derive_key({seed, 0x9AC, s}));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

PacReport pac_validate(const std::vector<std::vector<double>>& pool_scores,
                       std::size_t n_splits, const RiskBudget& budget, std::size_t L,
                       std::uint64_t seed, double cal_fraction) {
  budget.validate();
  if (pool_scores.empty() || n_splits == 0) {
    throw ContractViolation("pac_validate: need a score pool and at least one split");
  }
  if (!(cal_fraction > 0 && cal_fraction < 1)) {
    throw ContractViolation("pac_validate: cal_fraction must be in (0, 1)");
  }
  const std::size_t items = pool_scores.front().size();
  for (const auto& s : pool_scores) {
    if (s.size() != items) throw ContractViolation("pac_validate: ragged score pool");
  }
  const auto n_cal = static_cast<std::size_t>(std::floor(cal_fraction * items));
  if (n_cal == 0 || n_cal == items) {
    throw ContractViolation("pac_validate: pool too small for disjoint cal/test halves");
  }
  PacReport rep;
  rep.splits.resize(n_splits);
  parallel_for(n_splits, [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      const auto perm = pac_permutation(items, seed, s);
      std::vector<std::vector<double>> cal(pool_scores.size()), test(pool_scores.size());
      for (std::size_t k = 0; k < pool_scores.size(); ++k) {
        cal[k].reserve(n_cal);
        test[k].reserve(items - n_cal);
        for (std::size_t i = 0; i < items; ++i) {
          (i < n_cal ? cal[k] : test[k]).push_back(pool_scores[k][perm[i]]);
        }
      }
      PacSplitRecord& rec = rep.splits[s];
      rec.split = s;
      CalibrationResult result;
      try {
        result = calibrate_scores(cal, budget, L);
      } catch (const CalibrationInfeasible& e) {
        rec.reason = e.what();
        continue;
      }
      if (!result.feasible()) {
        rec.reason = "no admissible threshold";
        continue;
      }
      rec.feasible = true;
      rec.thresholds = result.thresholds();
      rec.max_fnr = fnr_from_scores(test, rec.thresholds).max;
      rec.pass = rec.max_fnr <= budget.alpha;
    }
  }, 1);
  const auto passed = std::count_if(rep.splits.begin(), rep.splits.end(),
                                    [](const PacSplitRecord& r) { return r.pass; });
  rep.pass_rate = static_cast<double>(passed) / static_cast<double>(n_splits);
  return rep;
}

void VolumeBoundInput::validate() const {
  if (!(c0 > 0)) throw ContractViolation("VolumeBoundInput: c0 must be positive");
  if (!(alpha > 0 && alpha < 1)) throw ContractViolation("VolumeBoundInput: alpha in (0, 1)");
}

VolumeBound volume_bound_check(const MembershipMask& pred, const MembershipMask& ref,
                               const VolumeBoundInput& vb) {
  vb.validate();
  if (!(pred.grid == ref.grid)) throw ContractViolation("volume_bound_check: grid mismatch");
  std::size_t missed = 0;
  for (std::size_t i = 0; i < ref.cells.size(); ++i) missed += ref.cells[i] && !pred.cells[i];
  return {static_cast<double>(missed) * ref.grid.cell_area(),
          vb.alpha * std::exp(-vb.divergence * vb.t) / vb.c0};
}

std::vector<SensitivityPoint> sensitivity_curve(const ReachPredictor& predictor,
                                                const Eigen::MatrixXd& states, int k,
                                                const Eigen::VectorXd& sigma_px,
                                                const std::vector<double>& sigmas,
                                                std::uint64_t seed) {
  if (sigma_px.size() != states.cols()) {
    throw ContractViolation("sensitivity_curve: sigma_px does not match the state dimension");
  }
  Eigen::MatrixXd base(states.rows(), states.cols());
  for (Eigen::Index r = 0; r < states.rows(); ++r) {
    Stream rng(derive_key({seed, static_cast<std::uint64_t>(Domain::kSensitivity),
                           static_cast<std::uint64_t>(r)}));
    for (Eigen::Index c = 0; c < states.cols(); ++c) base(r, c) = rng.normal() * sigma_px[c];
  }
  std::vector<SensitivityPoint> curve;
  for (double sigma : sigmas) {
    const Eigen::MatrixXd perturbed = states + sigma * base;
    const auto d = predictor.membership_rows(perturbed, k, Domain::kSensitivity, 0);
    const auto acc = std::count_if(d.begin(), d.end(), [](const auto& x) { return x.member; });
    curve.push_back({sigma, d.empty() ? 0.0 : static_cast<double>(acc) / d.size()});
  }
  return curve;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  auto out = open_out(path);
  out << "step,iou,precision,recall,fnr,q,bound,measured\n";
  for (const auto& r : rows) {
    out << r.k << ',' << fmt(r.iou) << ',' << fmt(r.precision) << ',' << fmt(r.recall) << ','
        << fmt(r.fnr) << ',' << fmt(r.q) << ',' << (r.bound ? fmt(*r.bound) : "") << ','
        << (r.measured ? fmt(*r.measured) : "") << '\n';
  }
}

void write_pgm(const std::filesystem::path& path, const MembershipMask& mask) {
  auto out = open_out(path, true);
  const int nx = mask.grid.cells[0], ny = mask.grid.cells[1];
  out << "P5\n" << nx << ' ' << ny << "\n255\n";
  std::vector<char> row(static_cast<std::size_t>(nx));
  for (int iy = ny - 1; iy >= 0; --iy) {
    for (int ix = 0; ix < nx; ++ix) {
      row[static_cast<std::size_t>(ix)] =
          mask.cells[static_cast<std::size_t>(iy) * nx + ix] ? static_cast<char>(255) : 0;
    }
    out.write(row.data(), nx);
  }
}

void write_mask_cells_csv(const std::filesystem::path& path, const MembershipMask& mask) {
  auto out = open_out(path);
  out << "ix,iy,x,y\n";
  const auto nx = static_cast<std::size_t>(mask.grid.cells[0]);
  for (std::size_t c = 0; c < mask.cells.size(); ++c) {
    if (!mask.cells[c]) continue;
    const auto ctr = mask.grid.center(c);
    out << c % nx << ',' << c / nx << ',' << fmt(ctr[0]) << ',' << fmt(ctr[1]) << '\n';
  }
}

void write_sensitivity_csv(const std::filesystem::path& path,
                           const std::vector<SensitivityPoint>& curve) {
  auto out = open_out(path);
  out << "sigma,acceptance\n";
  for (const auto& p : curve) out << fmt(p.sigma) << ',' << fmt(p.acceptance) << '\n';
}

}  // namespace reachcal
