#include "reachcal/christoffel.h"

#include <random>

#include <gtest/gtest.h>

#include "reachcal/errors.h"

namespace reachcal {
namespace {

Eigen::MatrixXd gaussian_samples(Eigen::Index m, Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Eigen::MatrixXd s(m, n);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = d(rng);
  return s;
}

TEST(MonomialBasis, DegreeOne) {
  const auto z = monomial_basis(Eigen::Vector2d(2, 3), 1);
  EXPECT_EQ(z, Eigen::Vector3d(1, 2, 3));
}

TEST(MonomialBasis, GradedLexicographicOrder) {
  const auto z = monomial_basis(Eigen::Vector2d(2, 3), 2);
  Eigen::VectorXd expected(6);
  expected << 1, 2, 3, 4, 6, 9;
  EXPECT_EQ(z, expected);
  EXPECT_EQ(monomial_exponents(3, 2)[4], (std::vector<int>{2, 0, 0}));
}

TEST(MonomialBasis, CountIsBinomial) {
  EXPECT_EQ(monomial_basis(Eigen::Vector2d(0.1, 0.2), 11).size(), 78);
  EXPECT_EQ(monomial_exponents(6, 4).size(), 210u);
  EXPECT_EQ(monomial_basis(Eigen::Vector2d(1, 1), 2), Eigen::VectorXd::Ones(6));
}

TEST(ChristoffelFit, SymmetricPairInOneDimension) {
  Eigen::MatrixXd s(2, 1);
  s << -1, 1;
  const auto m = christoffel_fit(s, 1, 0.0);
  EXPECT_TRUE(m.moment.isApprox(Eigen::Matrix2d::Identity()));
  EXPECT_NEAR(christoffel_score(Eigen::VectorXd::Constant(1, 0.0), m), 1.0, 1e-14);
  EXPECT_NEAR(christoffel_score(Eigen::VectorXd::Constant(1, 2.0), m), 5.0, 1e-13);
}

TEST(ChristoffelFit, DuplicatedSamplesGiveSameModel) {
  const auto s = gaussian_samples(200, 2, 1);
  Eigen::MatrixXd twice(400, 2);
  twice << s, s;
  const auto a = christoffel_fit(s, 4);
  const auto b = christoffel_fit(twice, 4);
  EXPECT_TRUE(a.moment.isApprox(b.moment, 1e-12));
  const Eigen::Vector2d q(0.3, -1.2);
  EXPECT_NEAR(christoffel_score(q, a), christoffel_score(q, b), 1e-8 * christoffel_score(q, a));
}

TEST(ChristoffelFit, IdenticalSamplesAreSingular) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(20, 2, 0.5);
  EXPECT_THROW(christoffel_fit(s, 2, 0.0), NumericError);
}

TEST(ChristoffelFit, DefaultRidgeIsRelativeToTrace) {
  const auto m = christoffel_fit(gaussian_samples(300, 2, 2), 3);
  EXPECT_NEAR(m.ridge, 1e-10 * m.moment.trace() / m.basis_dim, 1e-25);
}

TEST(ChristoffelScore, NonNegative) {
  const auto m = christoffel_fit(gaussian_samples(300, 2, 3), 5);
  const auto q = gaussian_samples(500, 2, 4) * 3;
  for (double v : christoffel_scores(q, m)) EXPECT_GE(v, 0.0);
}

TEST(ChristoffelScore, TraceIdentity) {
  for (std::uint64_t seed : {5, 6, 7}) {
    const auto s = gaussian_samples(500, 2, seed);
    const auto m = christoffel_fit(s, 3, 0.0);
    const auto v = christoffel_scores(s, m);
    const double mean = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()).mean();
    EXPECT_NEAR(mean, static_cast<double>(m.basis_dim), 1e-6);
  }
}

TEST(ChristoffelScore, GrowsBeyondSampleHull) {
  const auto s = gaussian_samples(400, 1, 8);
  const double top = s.maxCoeff();
  for (int d : {1, 2, 3, 4}) {
    const auto m = christoffel_fit(s, d, 0.0);
    double prev = christoffel_score(Eigen::VectorXd::Constant(1, top), m);
    for (double step = 0.1; step <= 3.0; step += 0.1) {
      const double v = christoffel_score(Eigen::VectorXd::Constant(1, top + step), m);
      EXPECT_GT(v, prev) << "degree " << d;
      prev = v;
    }
  }
}

TEST(ChristoffelScore, ProjectionSelectsCoordinates) {
  const auto s = gaussian_samples(300, 2, 9);
  std::vector<ChristoffelModel> models{christoffel_fit(s, 2)};
  ChristoffelScore full(models, 2);
  ChristoffelScore projected(models, 4, {2, 0});
  Eigen::MatrixXd q4(3, 4);
  q4.setRandom();
  Eigen::MatrixXd q2(3, 2);
  q2 << q4.col(2), q4.col(0);
  EXPECT_EQ(projected.score(q4, 0, Domain::kTest, 0), full.score(q2, 0, Domain::kTest, 0));
  EXPECT_THROW(full.score(q2, 1, Domain::kTest, 0), ContractViolation);
}

}  // namespace
}  // namespace reachcal
