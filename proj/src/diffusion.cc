#include "reachcal/diffusion.h"

#include <cmath>
#include <cstring>

#include "reachcal/crc64.h"
#include "reachcal/errors.h"
#include "reachcal/parallel.h"

namespace reachcal {

NoiseSchedule::NoiseSchedule(std::vector<double> beta) : beta_(std::move(beta)) {
  if (beta_.empty()) throw ConfigError("noise schedule needs T >= 1");
  alpha_.resize(beta_.size());
  alpha_bar_.resize(beta_.size());
  double running = 1.0;
  for (std::size_t i = 0; i < beta_.size(); ++i) {
    if (!(beta_[i] > 0 && beta_[i] < 1)) {
      throw ConfigError("noise schedule: beta must lie in (0, 1)");
    }
    alpha_[i] = 1.0 - beta_[i];
    running *= alpha_[i];
    alpha_bar_[i] = running;
  }
}

std::size_t NoiseSchedule::index(int tau) const {
  if (tau < 1 || tau > T()) {
    throw ContractViolation("diffusion step " + std::to_string(tau) +
                            " outside [1, " + std::to_string(T()) + "]");
  }
  return static_cast<std::size_t>(tau - 1);
}

std::uint64_t NoiseSchedule::hash() const {
  return crc64(std::as_bytes(std::span<const double>(beta_)));
}

NoiseSchedule make_schedule(int T, double beta1, double betaT) {
  if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
  if (!(beta1 > 0 && beta1 <= betaT && betaT < 1)) {
    throw ConfigError("make_schedule: need 0 < beta1 <= betaT < 1");
  }
  std::vector<double> beta(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    beta[static_cast<std::size_t>(i)] =
        T == 1 ? beta1 : beta1 + (betaT - beta1) * static_cast<double>(i) / (T - 1);
  }
  return NoiseSchedule(std::move(beta));
}

Eigen::VectorXd noisify(const Eigen::VectorXd& x0, int tau,
                        const Eigen::VectorXd& eps,
                        const NoiseSchedule& schedule) {
  const double ab = schedule.alpha_bar(tau);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

void ScoreConfig::validate(const NoiseSchedule& schedule) const {
  if (taus.empty()) throw ConfigError("score: taus must be nonempty");
  for (int tau : taus) {
    if (tau < 1 || tau > schedule.T()) {
      throw ConfigError("score: tau " + std::to_string(tau) + " outside schedule");
    }
  }
  if (repeats < 1) throw ConfigError("score: repeats must be >= 1");
}

std::vector<double> ScoreConfig::weights(const NoiseSchedule& schedule) const {
  validate(schedule);
  const double M = static_cast<double>(taus.size()) * repeats;
  std::vector<double> w(taus.size());
  if (weighting == ScoreWeighting::kUniform) {
    std::fill(w.begin(), w.end(), 1.0 / M);
    return w;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < taus.size(); ++j) {
    w[j] = schedule.beta(taus[j]) / (1.0 - schedule.alpha_bar(taus[j]));
    total += w[j];
  }
  for (auto& x : w) x /= total * repeats;
  return w;
}

std::uint64_t ScoreConfig::hash() const {
  std::vector<std::uint64_t> words;
  for (int t : taus) words.push_back(static_cast<std::uint64_t>(t));
  words.push_back(static_cast<std::uint64_t>(repeats));
  words.push_back(static_cast<std::uint64_t>(weighting));
  words.push_back(seed);
  return crc64(std::as_bytes(std::span<const std::uint64_t>(words)));
}

void draw_query_noise(const QueryKey& key, int tau, int repeat,
                      Eigen::Ref<Eigen::VectorXd> eps) {
  Stream rng(derive_key({key.seed, static_cast<std::uint64_t>(key.domain), key.k,
                         key.index, static_cast<std::uint64_t>(tau),
                         static_cast<std::uint64_t>(repeat)}));
  for (Eigen::Index d = 0; d < eps.size(); ++d) eps[d] = rng.normal();
}

namespace {

// Scores the columns of a normalized batch.
void score_normalized(const Eigen::MatrixXd& xn, int k,
                      const NoisePredictor& model,
                      const NoiseSchedule& schedule, const ScoreConfig& cfg,
                      const std::vector<double>& weights, Domain domain,
                      std::uint64_t first_index, std::span<double> out) {
  const Eigen::Index n = xn.rows();
  const Eigen::Index B = xn.cols();
  Eigen::MatrixXd eps(n, B);
  Eigen::MatrixXd x_tau(n, B);
  Eigen::MatrixXd eps_hat(n, B);
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(B);
  for (std::size_t j = 0; j < cfg.taus.size(); ++j) {
    const int tau = cfg.taus[j];
    const double ab = schedule.alpha_bar(tau);
    const double sa = std::sqrt(ab);
    const double sn = std::sqrt(1.0 - ab);
    for (int r = 0; r < cfg.repeats; ++r) {
      for (Eigen::Index b = 0; b < B; ++b) {
        QueryKey key{cfg.seed, domain, static_cast<std::uint64_t>(k),
                     first_index + static_cast<std::uint64_t>(b)};
        draw_query_noise(key, tau, r, eps.col(b));
      }
      x_tau.noalias() = sa * xn + sn * eps;
      model.predict(x_tau, tau, k, eps_hat);
      acc += weights[j] * (eps_hat - eps).colwise().squaredNorm().transpose().array();
    }
  }
  for (Eigen::Index b = 0; b < B; ++b) {
    if (!std::isfinite(acc[b])) {
      throw NumericError("non-finite score for query " +
                         std::to_string(first_index + static_cast<std::uint64_t>(b)) +
                         " at step " + std::to_string(k));
    }
    out[static_cast<std::size_t>(b)] = acc[b];
  }
}

}  // namespace

double score(std::span<const double> x, int k, const NoisePredictor& model,
             const Normalizer& normalizer, const NoiseSchedule& schedule,
             const ScoreConfig& cfg, const QueryKey& key) {
  if (x.size() != normalizer.dim() || x.size() != model.dim()) {
    throw ContractViolation("score: state dimension mismatch");
  }
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::MatrixXd xn = normalizer.apply(v);
  ScoreConfig local = cfg;
  local.seed = key.seed;
  double s = 0.0;
  score_normalized(xn, k, model, schedule, local, local.weights(schedule), key.domain,
                   key.index, std::span<double>(&s, 1));
  return s;
}

std::vector<double> score_rows(const Eigen::MatrixXd& states, int k,
                               const NoisePredictor& model,
                               const Normalizer& normalizer,
                               const NoiseSchedule& schedule,
                               const ScoreConfig& cfg, Domain domain,
                               std::uint64_t first_index) {
  if (static_cast<std::size_t>(states.cols()) != normalizer.dim() ||
      static_cast<std::size_t>(states.cols()) != model.dim()) {
    throw ContractViolation("score_rows: state dimension mismatch");
  }
  const auto weights = cfg.weights(schedule);
  const std::size_t rows = static_cast<std::size_t>(states.rows());
  std::vector<double> out(rows);
  constexpr std::size_t kBatch = 512;
  const std::size_t batches = (rows + kBatch - 1) / kBatch;
  parallel_for(batches, [&](std::size_t begin, std::size_t end) {
    for (std::size_t bi = begin; bi < end; ++bi) {
      const std::size_t r0 = bi * kBatch;
      const std::size_t r1 = std::min(rows, r0 + kBatch);
      Eigen::MatrixXd xn = states.middleRows(static_cast<Eigen::Index>(r0),
                                             static_cast<Eigen::Index>(r1 - r0))
                               .transpose();
      normalizer.apply_columns(xn);
      score_normalized(xn, k, model, schedule, cfg, weights, domain,
                       first_index + r0, std::span<double>(out).subspan(r0, r1 - r0));
    }
  }, 1);
  return out;
}

void GaussianToy::validate() const {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw ContractViolation("gaussian toy: covariance shape mismatch");
  }
  if (!cov.isApprox(cov.transpose(), 1e-12)) {
    throw ContractViolation("gaussian toy: covariance not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw ContractViolation("gaussian toy: covariance not positive definite");
  }
}

Eigen::VectorXd gaussian_posterior_mean(const GaussianToy& toy,
                                        const Eigen::VectorXd& x_tau, int tau,
                                        const NoiseSchedule& schedule) {
  const double ab = schedule.alpha_bar(tau);
  const double sa = std::sqrt(ab);
  const Eigen::Index n = toy.mean.size();
  Eigen::MatrixXd S = ab * toy.cov + (1.0 - ab) * Eigen::MatrixXd::Identity(n, n);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    throw NumericError("gaussian oracle: singular marginal covariance");
  }
  Eigen::VectorXd r = llt.solve(x_tau - sa * toy.mean);
  return toy.mean + sa * (toy.cov * r);
}

Eigen::VectorXd gaussian_oracle_denoiser(const GaussianToy& toy,
                                         const Eigen::VectorXd& x_tau, int tau,
                                         const NoiseSchedule& schedule) {
  const double ab = schedule.alpha_bar(tau);
  Eigen::VectorXd x0_hat = gaussian_posterior_mean(toy, x_tau, tau, schedule);
  return (x_tau - std::sqrt(ab) * x0_hat) / std::sqrt(1.0 - ab);
}

GaussianOraclePredictor::GaussianOraclePredictor(GaussianToy toy,
                                                 NoiseSchedule schedule)
    : toy_(std::move(toy)), schedule_(std::move(schedule)) {
  toy_.validate();
}

void GaussianOraclePredictor::predict(const Eigen::MatrixXd& x_tau, int tau, int,
                                      Eigen::MatrixXd& eps_hat) const {
  eps_hat.resize(x_tau.rows(), x_tau.cols());
  for (Eigen::Index b = 0; b < x_tau.cols(); ++b) {
    eps_hat.col(b) = gaussian_oracle_denoiser(toy_, x_tau.col(b), tau, schedule_);
  }
}

Normalizer identity_normalizer(std::size_t n) {
  const auto d = static_cast<Eigen::Index>(n);
  return Normalizer(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d));
}

DiffusionScore::DiffusionScore(std::shared_ptr<const NoisePredictor> model,
                               Normalizer normalizer, NoiseSchedule schedule,
                               ScoreConfig cfg)
    : model_(std::move(model)),
      normalizer_(std::move(normalizer)),
      schedule_(std::move(schedule)),
      cfg_(std::move(cfg)) {
  if (!model_) throw ContractViolation("DiffusionScore: null model");
  cfg_.validate(schedule_);
}

std::vector<double> DiffusionScore::score(const Eigen::MatrixXd& states, int k,
                                          Domain domain,
                                          std::uint64_t first_index) const {
  return score_rows(states, k, *model_, normalizer_, schedule_, cfg_, domain, first_index);
}

}  // namespace reachcal
