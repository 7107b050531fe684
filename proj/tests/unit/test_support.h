#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "reachcal/calibration.h"
#include "reachcal/diffusion.h"
#include "reachcal/score_function.h"

namespace reachcal::testing {

// Deterministic score given by a function of (state, k).
class FnScore : public ScoreFunction {
 public:
  using Fn = std::function<double(const Eigen::RowVectorXd&, int)>;
  FnScore(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
  std::size_t dim() const override { return dim_; }
  std::vector<double> score(const Eigen::MatrixXd& states, int k, Domain,
                            std::uint64_t) const override {
    std::vector<double> out(static_cast<std::size_t>(states.rows()));
    for (Eigen::Index r = 0; r < states.rows(); ++r) out[r] = fn_(states.row(r), k);
    return out;
  }

 private:
  std::size_t dim_;
  Fn fn_;
};

inline std::shared_ptr<FnScore> constant_score(std::size_t dim, double value) {
  return std::make_shared<FnScore>(dim, [value](const Eigen::RowVectorXd&, int) { return value; });
}

inline std::shared_ptr<FnScore> euclidean_score(std::size_t dim) {
  return std::make_shared<FnScore>(dim, [](const Eigen::RowVectorXd& x, int) { return x.norm(); });
}

// Calibration result carrying fixed thresholds.
inline CalibrationResult fixed_thresholds(const std::vector<double>& q, double alpha = 0.05) {
  CalibrationResult r;
  r.budget = {alpha, 0.2, static_cast<int>(q.size())};
  for (std::size_t k = 0; k < q.size(); ++k) {
    StepCalibration s;
    s.k = static_cast<int>(k);
    s.q = q[k];
    r.steps.push_back(s);
  }
  return r;
}

// Predicts zero noise.
class ZeroPredictor : public NoisePredictor {
 public:
  explicit ZeroPredictor(std::size_t n) : n_(n) {}
  std::size_t dim() const override { return n_; }
  void predict(const Eigen::MatrixXd& x_tau, int, int, Eigen::MatrixXd& eps_hat) const override {
    eps_hat.setZero(x_tau.rows(), x_tau.cols());
  }

 private:
  std::size_t n_;
};

// Recovers the exact noise of a query whose clean state is known.
class EchoPredictor : public NoisePredictor {
 public:
  EchoPredictor(Eigen::VectorXd x0, NoiseSchedule schedule)
      : x0_(std::move(x0)), schedule_(std::move(schedule)) {}
  std::size_t dim() const override { return static_cast<std::size_t>(x0_.size()); }
  void predict(const Eigen::MatrixXd& x_tau, int tau, int, Eigen::MatrixXd& eps_hat) const override {
    const double ab = schedule_.alpha_bar(tau);
    eps_hat = (x_tau.colwise() - std::sqrt(ab) * x0_) / std::sqrt(1.0 - ab);
  }

 private:
  Eigen::VectorXd x0_;
  NoiseSchedule schedule_;
};

}  // namespace reachcal::testing
