#include "reachcal/denoiser.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "reachcal/dynamics.h"
#include "reachcal/errors.h"

namespace reachcal {
namespace {

using MatD = Eigen::MatrixXd;

std::vector<std::size_t> all_ids(std::size_t N) {
  std::vector<std::size_t> ids(N);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

FilmMlp<double> toy_net(std::uint64_t seed) {
  FilmMlp<double> net(3, 5, 2, 8);
  net.init(seed);
  // Give the zero-initialized output layer and biases some weight so every
  // gradient path is exercised.
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> d(0, 0.3);
  for (auto& p : net.params()) {
    if (p == 0.0) p = d(rng);
  }
  return net;
}

void toy_batch(std::uint64_t seed, int B, MatD& x, MatD& cond, MatD& eps) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  x.resize(3, B);
  eps.resize(3, B);
  cond.resize(8, B);
  for (auto* m : {&x, &eps, &cond}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = d(rng);
  }
}

TEST(EmbedCondition, EntriesBounded) {
  for (int tau : {1, 2, 500, 1000}) {
    for (int k = 0; k < 30; k += 7) {
      const auto e = embed_condition(tau, k, 1000, 30, 64);
      EXPECT_EQ(e.size(), 128);
      EXPECT_LE(e.cwiseAbs().maxCoeff(), 1.0);
    }
  }
}

TEST(EmbedCondition, Deterministic) {
  EXPECT_EQ(embed_condition(3, 4, 1000, 30, 16), embed_condition(3, 4, 1000, 30, 16));
}

TEST(EmbedCondition, DistinctStepsAreSeparated) {
  for (int a = 0; a < 30; ++a) {
    for (int b = a + 1; b < 30; ++b) {
      const double dist = (embed_condition(2, a, 1000, 30, 64) - embed_condition(2, b, 1000, 30, 64)).norm();
      EXPECT_GT(dist, 0.0) << a << " vs " << b;
    }
  }
}

TEST(EmbedCondition, RangeChecked) {
  EXPECT_THROW(embed_condition(0, 0, 1000, 30, 16), ContractViolation);
  EXPECT_THROW(embed_condition(1001, 0, 1000, 30, 16), ContractViolation);
  EXPECT_THROW(embed_condition(1, 30, 1000, 30, 16), ContractViolation);
  EXPECT_THROW(embed_condition(1, -1, 1000, 30, 16), ContractViolation);
}

TEST(FilmMlp, ZeroOutputLayerPredictsZero) {
  FilmMlp<double> net(4, 16, 3, 8);
  net.init(3);
  MatD x = MatD::Random(4, 10) * 5;
  MatD cond = MatD::Random(8, 10);
  MatD g, out;
  net.film(cond, g);
  net.forward(x, g, out);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(FilmMlp, BatchedForwardMatchesPerSample) {
  const auto net = toy_net(4).cast<float>();
  MatD x, cond, eps;
  toy_batch(9, 12, x, cond, eps);
  Eigen::MatrixXf xf = x.cast<float>(), cf = cond.cast<float>();
  Eigen::MatrixXf g, out;
  net.film(cf, g);
  net.forward(xf, g, out);
  for (Eigen::Index b = 0; b < 12; ++b) {
    Eigen::MatrixXf gb, ob;
    net.film(cf.col(b), gb);
    net.forward(xf.col(b), gb, ob);
    EXPECT_LT((ob - out.col(b)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FilmMlp, GradientMatchesCentralDifferences) {
  auto net = toy_net(7);
  MatD x, cond, eps;
  toy_batch(11, 6, x, cond, eps);
  ParamVector<double> grad, scratch;
  net.loss_and_grad(x, cond, eps, grad);

  // Probe parameters from every block: FiLM projections, hidden layers, output.
  const std::size_t P = net.param_count();
  const std::size_t film1 = 8 * 8 + 8;
  const std::size_t film2 = film1 + 20 * 8 + 20;
  const std::size_t hidden0 = film2 + 5 * 3 + 5;
  const std::size_t hidden1 = hidden0 + 5 * 5 + 5;
  const std::vector<std::size_t> probes{3, film1 - 2, film1 + 17, film2 - 1, film2 + 4,
                                        hidden0 - 3, hidden0 + 12, hidden1 - 1, hidden1 + 6, P - 1};
  ASSERT_EQ(hidden1 + 3 * 5 + 3, P);
  for (std::size_t i : probes) {
    const double h = 1e-6;
    const double orig = net.params()[i];
    net.params()[i] = orig + h;
    const double up = net.loss_and_grad(x, cond, eps, scratch);
    net.params()[i] = orig - h;
    const double down = net.loss_and_grad(x, cond, eps, scratch);
    net.params()[i] = orig;
    const double fd = (up - down) / (2 * h);
    EXPECT_LE(std::abs(fd - grad[i]), 1e-3 * std::max(std::abs(fd), 1e-6))
        << "param " << i << " fd " << fd << " analytic " << grad[i];
  }
}

TEST(FilmMlp, DuplicatedBatchKeepsLoss) {
  const auto net = toy_net(5);
  MatD x, cond, eps;
  toy_batch(2, 5, x, cond, eps);
  MatD x2(3, 10), c2(8, 10), e2(3, 10);
  x2 << x, x;
  c2 << cond, cond;
  e2 << eps, eps;
  ParamVector<double> g1, g2;
  EXPECT_NEAR(net.loss_and_grad(x, cond, eps, g1), net.loss_and_grad(x2, c2, e2, g2), 1e-12);
}

TEST(FilmMlp, ZeroNetworkLossIsNoiseEnergy) {
  FilmMlp<double> net(2, 8, 2, 8);
  net.init(1);
  const auto schedule = make_schedule();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  MatD x0(2, 20000);
  for (Eigen::Index i = 0; i < x0.size(); ++i) x0.data()[i] = d(rng);
  std::vector<int> ks(20000, 0);
  ParamVector<double> grad;
  const double loss = diffusion_loss_and_grad<double>(net, x0, ks, 1, 4, schedule, rng, grad);
  // Mean of ||eps||^2 with n = 2 has standard error 2 / sqrt(20000).
  EXPECT_NEAR(loss, 2.0, 0.06);
}

TEST(AdamW, ZeroLearningRateLeavesParameters) {
  auto net = toy_net(1).cast<float>();
  const auto before = net.params();
  ParamVector<float> grad(before.size(), 0.5f);
  AdamW plain(0.0, 0.0);
  plain.step(net.params(), grad);
  EXPECT_EQ(net.params(), before);
  AdamW decayed(0.0, 0.1);
  decayed.step(net.params(), grad);
  EXPECT_EQ(net.params(), before);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParamVector<double> p{1.0, -2.0};
  AdamW opt(0.01, 0.0);
  opt.step(p, ParamVector<double>{3.0, -0.5});
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-9);
}

TEST(AdamW, DecoupledDecay) {
  ParamVector<double> p{2.0};
  AdamW opt(0.1, 0.5);
  opt.step(p, ParamVector<double>{0.0});
  EXPECT_NEAR(p[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-12);
}

TEST(Train, LearnsGaussianOptimalDenoiser) {
  // Correlated 2-D Gaussian; the optimal low-noise denoiser is dominated by
  // the inverse covariance, so a zero predictor is far from it.
  Eigen::Matrix2d cov;
  cov << 1.0, 0.9, 0.9, 1.0;
  const Eigen::Matrix2d L = cov.llt().matrixL();
  Dataset ds(8000, 1, 2, 1.0);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> d;
  for (std::size_t i = 0; i < ds.N; ++i) {
    const Eigen::Vector2d x = L * Eigen::Vector2d(d(rng), d(rng));
    ds.at(i, 0)[0] = static_cast<float>(x[0]);
    ds.at(i, 0)[1] = static_cast<float>(x[1]);
  }
  const auto schedule = make_schedule();
  DenoiserConfig cfg;
  cfg.hidden_dim = 64;
  cfg.embed_dim = 16;
  cfg.batch_size = 256;
  cfg.epochs = 40;
  cfg.lr = 2e-3;
  cfg.seed = 5;
  auto model = std::make_shared<const DenoiserModel>(train(ds, all_ids(ds.N), schedule, cfg));

  // Oracle in the model's normalized coordinates.
  const auto& norm = model->normalizer;
  GaussianToy toy;
  toy.mean = (-norm.mean()).cwiseQuotient(norm.std());
  const Eigen::Matrix2d Dinv = norm.std().cwiseInverse().asDiagonal();
  toy.cov = Dinv * cov * Dinv;

  const int taus[] = {50, 200, 500};
  DenoiserPredictor pred(model, taus);
  const Eigen::Matrix2d Lt = toy.cov.llt().matrixL();
  for (int tau : taus) {
    const double ab = schedule.alpha_bar(tau);
    MatD xt(2, 2000);
    MatD oracle(2, 2000);
    for (Eigen::Index j = 0; j < xt.cols(); ++j) {
      const Eigen::Vector2d x0 = toy.mean + Lt * Eigen::Vector2d(d(rng), d(rng));
      xt.col(j) = std::sqrt(ab) * x0 + std::sqrt(1 - ab) * Eigen::Vector2d(d(rng), d(rng));
      oracle.col(j) = gaussian_oracle_denoiser(toy, xt.col(j), tau, schedule);
    }
    MatD eps_hat;
    pred.predict(xt, tau, 0, eps_hat);
    const double mse = (eps_hat - oracle).colwise().squaredNorm().mean();
    const double zero_mse = oracle.colwise().squaredNorm().mean();
    EXPECT_LT(mse, 0.05) << "tau " << tau;
    EXPECT_GT(zero_mse, 0.2) << "tau " << tau;
  }
}

TEST(Train, LossDecreasesOnDuffing) {
  const auto ds = generate_dataset(DuffingSystem{}, 200, 30, 0.1, 1);
  const auto schedule = make_schedule();
  int violations = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    DenoiserConfig cfg;
    cfg.epochs = 5;
    cfg.seed = seed;
    const auto model = train(ds, all_ids(ds.N), schedule, cfg);
    ASSERT_EQ(model.loss_curve.size(), 6u);
    violations += model.loss_curve.back() > model.loss_curve.front();
  }
  EXPECT_LE(violations, 1);
}

TEST(Train, DeterministicUnderSeed) {
  const auto ds = generate_dataset(DuffingSystem{}, 50, 5, 0.1, 2);
  DenoiserConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 64;
  const auto a = train(ds, all_ids(ds.N), make_schedule(), cfg);
  const auto b = train(ds, all_ids(ds.N), make_schedule(), cfg);
  EXPECT_EQ(a.net.params(), b.net.params());
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(Train, DivergenceNamesEpochAndBatch) {
  const auto ds = generate_dataset(DuffingSystem{}, 50, 5, 0.1, 2);
  DenoiserConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.lr = 1e30;
  try {
    train(ds, all_ids(ds.N), make_schedule(), cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  const auto ds = generate_dataset(DuffingSystem{}, 40, 4, 0.1, 3);
  DenoiserConfig cfg;
  cfg.hidden_dim = 32;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  auto model = train(ds, all_ids(ds.N), make_schedule(), cfg);
  model.provenance["dataset_crc"] = "abc";
  const auto path = std::filesystem::temp_directory_path() / "reachcal_model.ckpt";
  save_checkpoint(model, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.net.params(), model.net.params());
  EXPECT_EQ(back.provenance, model.provenance);
  EXPECT_EQ(back.loss_curve, model.loss_curve);
  EXPECT_EQ(back.param_hash(), model.param_hash());

  auto a = std::make_shared<const DenoiserModel>(model);
  auto b = std::make_shared<const DenoiserModel>(back);
  const int taus[] = {1, 2};
  MatD x = MatD::Random(2, 16), ea, eb;
  DenoiserPredictor(a, taus).predict(x, 2, 3, ea);
  DenoiserPredictor(b, taus).predict(x, 2, 3, eb);
  EXPECT_EQ(ea, eb);

  // Flip one parameter byte.
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(-20, std::ios::end);
  char c;
  f.read(&c, 1);
  c ^= 0x10;
  f.seekp(-20, std::ios::end);
  f.write(&c, 1);
  f.close();
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace reachcal
