#include "reachcal/calibration.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "reachcal/errors.h"

namespace reachcal {
namespace {

long double bernoulli_kl(long double a, long double b) {
  long double v = 0.0L;
  if (a > 0) v += a * std::log(a / b);
  if (a < 1) v += (1 - a) * std::log((1 - a) / (1 - b));
  return v;
}

long double log_pmf(std::size_t i, std::size_t n, long double log_a, long double log_1ma) {
  const auto nl = static_cast<long double>(n);
  const auto il = static_cast<long double>(i);
  return std::lgamma(nl + 1) - std::lgamma(il + 1) - std::lgamma(nl - il + 1) +
         il * log_a + (nl - il) * log_1ma;
}

double clip_pvalue(long double p) {
  constexpr double kTiny = std::numeric_limits<double>::min();
  return std::clamp(static_cast<double>(p), kTiny, 1.0);
}

void check_alpha(double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw ContractViolation("risk level alpha must lie in (0, 1)");
}

double hb_from_terms(long double hoeffding, long double log_cdf) {
  const long double bentkus = std::exp(1.0L + log_cdf);
  return clip_pvalue(std::min(hoeffding, bentkus));
}

std::size_t exceed_count(double r_hat, std::size_t n) {
  const double x = r_hat * static_cast<double>(n);
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(x));
}

}  // namespace

void RiskBudget::validate() const {
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("budget: alpha must lie in (0, 1)");
  if (!(delta > 0 && delta < 1)) throw ConfigError("budget: delta must lie in (0, 1)");
  if (K < 1) throw ConfigError("budget: K must be >= 1");
}

double empirical_risk(std::span<const double> scores, double lambda) {
  if (scores.empty()) throw ContractViolation("empirical_risk: empty score list");
  const auto above = std::count_if(scores.begin(), scores.end(),
                                   [lambda](double s) { return s > lambda; });
  return static_cast<double>(above) / static_cast<double>(scores.size());
}

double hoeffding_term(double r_hat, std::size_t n, double alpha) {
  check_alpha(alpha);
  const long double a = std::min<long double>(r_hat, alpha);
  return static_cast<double>(std::exp(-static_cast<long double>(n) * bernoulli_kl(a, alpha)));
}

long double binomial_log_cdf(std::size_t m, std::size_t n, double alpha) {
  check_alpha(alpha);
  if (m >= n) return 0.0L;
  const long double log_a = std::log(static_cast<long double>(alpha));
  const long double log_1ma = std::log1p(-static_cast<long double>(alpha));
  long double peak = -std::numeric_limits<long double>::infinity();
  std::vector<long double> terms(m + 1);
  for (std::size_t i = 0; i <= m; ++i) {
    terms[i] = log_pmf(i, n, log_a, log_1ma);
    peak = std::max(peak, terms[i]);
  }
  long double sum = 0.0L;
  for (long double t : terms) sum += std::exp(t - peak);
  return std::min(0.0L, peak + std::log(sum));
}

double hb_pvalue_count(std::size_t exceed, std::size_t n, double alpha) {
  if (n < 1) throw ContractViolation("hb_pvalue: n must be >= 1");
  if (exceed > n) throw ContractViolation("hb_pvalue: exceedance count above n");
  check_alpha(alpha);
  const long double r_hat = static_cast<long double>(exceed) / static_cast<long double>(n);
  const long double a = std::min<long double>(r_hat, alpha);
  const long double hoeffding = std::exp(-static_cast<long double>(n) * bernoulli_kl(a, alpha));
  return hb_from_terms(hoeffding, binomial_log_cdf(exceed, n, alpha));
}

double hb_pvalue(double r_hat, std::size_t n, double alpha) {
  if (!(r_hat >= 0 && r_hat <= 1)) throw ContractViolation("hb_pvalue: r_hat must lie in [0, 1]");
  if (n < 1) throw ContractViolation("hb_pvalue: n must be >= 1");
  return hb_pvalue_count(std::min(n, exceed_count(r_hat, n)), n, alpha);
}

HbTable::HbTable(std::size_t n, double alpha) : n_(n), pvalues_(n + 1) {
  if (n < 1) throw ContractViolation("HbTable: n must be >= 1");
  check_alpha(alpha);
  const long double log_a = std::log(static_cast<long double>(alpha));
  const long double log_1ma = std::log1p(-static_cast<long double>(alpha));
  // Running log-sum-exp of the pmf gives every prefix CDF in one pass.
  long double log_cdf = -std::numeric_limits<long double>::infinity();
  for (std::size_t m = 0; m <= n; ++m) {
    const long double t = log_pmf(m, n, log_a, log_1ma);
    if (std::isinf(log_cdf)) {
      log_cdf = t;
    } else {
      const long double hi = std::max(log_cdf, t);
      log_cdf = hi + std::log(std::exp(log_cdf - hi) + std::exp(t - hi));
    }
    const long double lc = m >= n ? 0.0L : std::min(0.0L, log_cdf);
    const long double r_hat = static_cast<long double>(m) / static_cast<long double>(n);
    const long double a = std::min<long double>(r_hat, alpha);
    const long double hoeffding = std::exp(-static_cast<long double>(n) * bernoulli_kl(a, alpha));
    pvalues_[m] = hb_from_terms(hoeffding, lc);
  }
}

std::size_t min_calibration_size(double alpha, double per_step_budget) {
  check_alpha(alpha);
  if (!(per_step_budget > 0 && per_step_budget < 1)) {
    throw ContractViolation("min_calibration_size: budget must lie in (0, 1)");
  }
  auto n = static_cast<std::size_t>(std::ceil(std::log(per_step_budget) / std::log1p(-alpha)));
  while (n > 1 && std::pow(1.0 - alpha, static_cast<double>(n - 1)) <= per_step_budget) --n;
  while (std::pow(1.0 - alpha, static_cast<double>(n)) > per_step_budget) ++n;
  return n;
}

ThresholdGrid build_grid(std::span<const double> scores, std::size_t L, int k) {
  if (L < 2) throw ConfigError("threshold grid needs L >= 2");
  if (scores.empty()) throw ContractViolation("build_grid: no calibration scores");
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) {
    throw CalibrationInfeasible("degenerate threshold grid at step " + std::to_string(k) +
                                    ": all calibration scores are equal",
                                k);
  }
  ThresholdGrid grid;
  grid.k = k;
  grid.values.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    grid.values[l] = lo + (hi - lo) * static_cast<double>(l) / static_cast<double>(L - 1);
  }
  grid.values.front() = lo;
  grid.values.back() = hi;
  return grid;
}

std::optional<double> select_threshold(const ThresholdGrid& grid,
                                       std::span<const double> p_values,
                                       double budget) {
  if (p_values.size() != grid.values.size()) {
    throw ContractViolation("select_threshold: p-value count does not match grid");
  }
  for (std::size_t l = 0; l < grid.values.size(); ++l) {
    if (p_values[l] <= budget) return grid.values[l];
  }
  return std::nullopt;
}

StepCalibration select_threshold(const ThresholdGrid& grid,
                                 std::span<const double> cal_scores,
                                 const RiskBudget& budget) {
  StepCalibration step;
  step.k = grid.k;
  step.n = cal_scores.size();
  step.grid = grid;
  std::vector<double> sorted(cal_scores.begin(), cal_scores.end());
  std::sort(sorted.begin(), sorted.end());
  HbTable table(step.n, budget.alpha);
  step.risks.resize(grid.values.size());
  step.p_values.resize(grid.values.size());
  for (std::size_t l = 0; l < grid.values.size(); ++l) {
    const auto above = static_cast<std::size_t>(
        sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), grid.values[l]));
    step.risks[l] = static_cast<double>(above) / static_cast<double>(step.n);
    step.p_values[l] = table.pvalue(above);
  }
  step.q = select_threshold(grid, step.p_values, budget.per_step());
  return step;
}

bool CalibrationResult::feasible() const {
  return std::all_of(steps.begin(), steps.end(), [](const auto& s) { return s.q.has_value(); });
}

double CalibrationResult::threshold(int k) const {
  if (k < 0 || static_cast<std::size_t>(k) >= steps.size() || !steps[static_cast<std::size_t>(k)].q) {
    throw ContractViolation("no calibrated threshold for step " + std::to_string(k));
  }
  return *steps[static_cast<std::size_t>(k)].q;
}

std::vector<double> CalibrationResult::thresholds() const {
  std::vector<double> q;
  for (std::size_t k = 0; k < steps.size(); ++k) q.push_back(threshold(static_cast<int>(k)));
  return q;
}

CalibrationResult calibrate_scores(const std::vector<std::vector<double>>& scores,
                                   const RiskBudget& budget, std::size_t L) {
  budget.validate();
  if (scores.size() != static_cast<std::size_t>(budget.K)) {
    throw ContractViolation("calibrate: got " + std::to_string(scores.size()) +
                            " steps of scores for K=" + std::to_string(budget.K));
  }
  CalibrationResult result;
  result.budget = budget;
  result.steps.resize(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (scores[k].empty()) {
      throw ContractViolation("calibrate: no calibration states at step " + std::to_string(k));
    }
    ThresholdGrid grid = build_grid(scores[k], L, static_cast<int>(k));
    result.steps[k] = select_threshold(grid, scores[k], budget);
  }
  return result;
}

void require_feasible(const CalibrationResult& result) {
  for (const auto& s : result.steps) {
    if (!s.q) {
      const std::size_t need = min_calibration_size(result.budget.alpha, result.budget.per_step());
      throw CalibrationInfeasible(
          "calibration infeasible at step " + std::to_string(s.k) + ": no threshold has p <= " +
              std::to_string(result.budget.per_step()) + " with n_k=" + std::to_string(s.n) +
              "; a zero-risk pass needs n_k >= " + std::to_string(need) + " (alpha=" +
              std::to_string(result.budget.alpha) + ")",
          s.k);
    }
  }
}

CalibrationResult calibrate_all(const std::vector<std::vector<double>>& scores,
                                const RiskBudget& budget, std::size_t L) {
  CalibrationResult r = calibrate_scores(scores, budget, L);
  require_feasible(r);
  return r;
}

nlohmann::json to_json(const CalibrationResult& r) {
  nlohmann::json j;
  j["format"] = "reachcal-calibration";
  j["budget"] = {{"alpha", r.budget.alpha}, {"delta", r.budget.delta}, {"K", r.budget.K},
                 {"per_step_budget", r.budget.per_step()}};
  j["score_hash"] = r.score_hash;
  j["model_hash"] = r.model_hash;
  j["provenance"] = r.provenance;
  j["steps"] = nlohmann::json::array();
  for (const auto& s : r.steps) {
    nlohmann::json js;
    js["k"] = s.k;
    js["n"] = s.n;
    js["grid"] = s.grid.values;
    js["empirical_risks"] = s.risks;
    js["p_values"] = s.p_values;
    js["q"] = s.q ? nlohmann::json(*s.q) : nlohmann::json(nullptr);
    j["steps"].push_back(std::move(js));
  }
  return j;
}

CalibrationResult calibration_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "reachcal-calibration") {
    throw FormatError("not a reachcal calibration record", 0);
  }
  CalibrationResult r;
  r.budget.alpha = j.at("budget").at("alpha");
  r.budget.delta = j.at("budget").at("delta");
  r.budget.K = j.at("budget").at("K");
  r.score_hash = j.at("score_hash");
  r.model_hash = j.at("model_hash");
  r.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
  for (const auto& js : j.at("steps")) {
    StepCalibration s;
    s.k = js.at("k");
    s.n = js.at("n");
    s.grid.k = s.k;
    s.grid.values = js.at("grid").get<std::vector<double>>();
    s.risks = js.at("empirical_risks").get<std::vector<double>>();
    s.p_values = js.at("p_values").get<std::vector<double>>();
    if (!js.at("q").is_null()) s.q = js.at("q").get<double>();
    r.steps.push_back(std::move(s));
  }
  return r;
}

void save_calibration(const CalibrationResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << to_json(result).dump(1) << '\n';
}

CalibrationResult load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return calibration_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed calibration record: " + e.what(), 0);
  }
}

ReachPredictor::ReachPredictor(std::shared_ptr<const ScoreFunction> score,
                               CalibrationResult calibration)
    : score_(std::move(score)), calibration_(std::move(calibration)) {
  if (!score_) throw ContractViolation("ReachPredictor: null score function");
}

ReachPredictor::Decision ReachPredictor::membership(std::span<const double> x, int k,
                                                    Domain domain, std::uint64_t index) const {
  Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return membership_rows(row, k, domain, index).front();
}

std::vector<ReachPredictor::Decision> ReachPredictor::membership_rows(
    const Eigen::MatrixXd& states, int k, Domain domain, std::uint64_t first_index) const {
  const double q = calibration_.threshold(k);
  const auto scores = score_->score(states, k, domain, first_index);
  std::vector<Decision> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = {scores[i] <= q, scores[i]};
  return out;
}

}  // namespace reachcal
