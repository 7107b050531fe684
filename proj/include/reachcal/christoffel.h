#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "reachcal/score_function.h"

namespace reachcal {

// Exponent tuples of every monomial of total degree <= d in n variables,
// graded-lexicographic: by degree, then by descending power of x_1, x_2, ...
std::vector<std::vector<int>> monomial_exponents(std::size_t n, int d);

// Monomials of total degree <= d evaluated at x; length C(n + d, d).
Eigen::VectorXd monomial_basis(const Eigen::VectorXd& x, int d);

struct ChristoffelModel {
  std::size_t n = 0;
  int degree = 0;
  std::size_t basis_dim = 0;
  double ridge = 0.0;
  // Samples are mapped to [-1, 1]^n by their bounding box before the basis is
  // applied; the Christoffel function is invariant to this affine change.
  Eigen::VectorXd center;
  Eigen::VectorXd half_width;
  std::vector<std::vector<int>> exponents;
  Eigen::MatrixXd moment;  // empirical E[z z^T], without ridge
  Eigen::LDLT<Eigen::MatrixXd> factor;  // of moment + ridge * I
};

// Empirical moment matrix of the samples (rows). ridge < 0 selects the default
// 1e-10 * tr(M) / basis_dim. Throws NumericError if the regularized matrix is
// singular.
ChristoffelModel christoffel_fit(const Eigen::MatrixXd& samples, int degree,
                                 double ridge = -1.0);

// z(x)^T (M + ridge I)^-1 z(x)
double christoffel_score(const Eigen::VectorXd& x, const ChristoffelModel& model);
std::vector<double> christoffel_scores(const Eigen::MatrixXd& xs,
                                       const ChristoffelModel& model);

// Per-step Christoffel models used as a nonconformity score, optionally on a
// coordinate projection of the state (e.g. (x, h) of the quadrotor).
class ChristoffelScore : public ScoreFunction {
 public:
  ChristoffelScore(std::vector<ChristoffelModel> per_step, std::size_t full_dim,
                   std::vector<int> projection = {});
  std::size_t dim() const override { return full_dim_; }
  std::vector<double> score(const Eigen::MatrixXd& states, int k, Domain domain,
                            std::uint64_t first_index) const override;

 private:
  std::vector<ChristoffelModel> models_;
  std::size_t full_dim_;
  std::vector<int> projection_;
};

}  // namespace reachcal
