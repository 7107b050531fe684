#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "reachcal/datastore.h"
#include "reachcal/random.h"
#include "reachcal/score_function.h"

namespace reachcal {

// Linear-beta DDPM variance schedule. Diffusion steps are 1-based.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> beta);

  int T() const { return static_cast<int>(beta_.size()); }
  double beta(int tau) const { return beta_[index(tau)]; }
  double alpha(int tau) const { return alpha_[index(tau)]; }
  double alpha_bar(int tau) const { return alpha_bar_[index(tau)]; }
  double snr(int tau) const { return alpha_bar(tau) / (1.0 - alpha_bar(tau)); }

  const std::vector<double>& betas() const { return beta_; }
  std::uint64_t hash() const;

 private:
  std::size_t index(int tau) const;

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

NoiseSchedule make_schedule(int T = 1000, double beta1 = 1e-4,
                            double betaT = 0.02);

// sqrt(abar) * x0 + sqrt(1 - abar) * eps
Eigen::VectorXd noisify(const Eigen::VectorXd& x0, int tau,
                        const Eigen::VectorXd& eps,
                        const NoiseSchedule& schedule);

enum class ScoreWeighting { kUniform, kElbo };

struct ScoreConfig {
  std::vector<int> taus{1, 2, 3};
  int repeats = 8;
  ScoreWeighting weighting = ScoreWeighting::kUniform;
  std::uint64_t seed = 0;

  void validate(const NoiseSchedule& schedule) const;
  // Weight of a single (tau, repeat) evaluation; sums to 1 over all M terms.
  std::vector<double> weights(const NoiseSchedule& schedule) const;
  std::uint64_t hash() const;
};

// Predicts the added noise for a batch of noised, normalized states at a
// single (tau, k). Columns of x_tau are samples.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual std::size_t dim() const = 0;
  virtual void predict(const Eigen::MatrixXd& x_tau, int tau, int k,
                       Eigen::MatrixXd& eps_hat) const = 0;
};

// Identifies the noise stream of one query: noise for (tau, repeat) is drawn
// from Stream(derive_key({seed, domain, k, index, tau, repeat})).
struct QueryKey {
  std::uint64_t seed = 0;
  Domain domain = Domain::kAdhoc;
  std::uint64_t k = 0;
  std::uint64_t index = 0;
};

void draw_query_noise(const QueryKey& key, int tau, int repeat,
                      Eigen::Ref<Eigen::VectorXd> eps);

// Reconstruction-error score of one unnormalized state at step k.
double score(std::span<const double> x, int k, const NoisePredictor& model,
             const Normalizer& normalizer, const NoiseSchedule& schedule,
             const ScoreConfig& cfg, const QueryKey& key);

// Scores rows of `states` (unnormalized, rows are queries) at step k. Row r
// uses QueryKey{cfg.seed, domain, k, first_index + r}. Parallel across rows;
// output does not depend on the thread count.
std::vector<double> score_rows(const Eigen::MatrixXd& states, int k,
                               const NoisePredictor& model,
                               const Normalizer& normalizer,
                               const NoiseSchedule& schedule,
                               const ScoreConfig& cfg, Domain domain,
                               std::uint64_t first_index);

// Gaussian data model used as an analytic test oracle.
struct GaussianToy {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  void validate() const;
};

// Posterior mean E[x0 | x_tau] under the Gaussian toy.
Eigen::VectorXd gaussian_posterior_mean(const GaussianToy& toy,
                                        const Eigen::VectorXd& x_tau, int tau,
                                        const NoiseSchedule& schedule);

// Bayes-optimal noise prediction (x_tau - sqrt(abar) x0_hat) / sqrt(1 - abar).
Eigen::VectorXd gaussian_oracle_denoiser(const GaussianToy& toy,
                                         const Eigen::VectorXd& x_tau, int tau,
                                         const NoiseSchedule& schedule);

// NoisePredictor backed by the Gaussian oracle (ignores k). Operates in the
// space the toy is defined in, so pair it with an identity normalizer.
class GaussianOraclePredictor : public NoisePredictor {
 public:
  GaussianOraclePredictor(GaussianToy toy, NoiseSchedule schedule);
  std::size_t dim() const override { return static_cast<std::size_t>(toy_.mean.size()); }
  void predict(const Eigen::MatrixXd& x_tau, int tau, int k,
               Eigen::MatrixXd& eps_hat) const override;

 private:
  GaussianToy toy_;
  NoiseSchedule schedule_;
};

Normalizer identity_normalizer(std::size_t n);

// ScoreFunction adapter over a noise predictor.
class DiffusionScore : public ScoreFunction {
 public:
  DiffusionScore(std::shared_ptr<const NoisePredictor> model, Normalizer normalizer,
                 NoiseSchedule schedule, ScoreConfig cfg);
  std::size_t dim() const override { return model_->dim(); }
  std::vector<double> score(const Eigen::MatrixXd& states, int k, Domain domain,
                            std::uint64_t first_index) const override;
  const ScoreConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<const NoisePredictor> model_;
  Normalizer normalizer_;
  NoiseSchedule schedule_;
  ScoreConfig cfg_;
};

}  // namespace reachcal
