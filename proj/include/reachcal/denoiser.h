#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "reachcal/datastore.h"
#include "reachcal/diffusion.h"
#include "reachcal/errors.h"

namespace reachcal {

// Parameter storage with a fixed base alignment, so vectorized kernels take
// the same path on every run.
template <class Scalar>
using ParamVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

struct DenoiserConfig {
  int hidden_dim = 128;
  int layers = 2;
  int embed_dim = 64;
  double lr = 5e-4;
  double weight_decay = 1e-2;
  int batch_size = 1024;
  int epochs = 60;
  std::uint64_t seed = 0;

  void validate() const;
};

// Sinusoidal embedding of tau/T followed by that of k/K; each half holds
// embed_dim/2 (sin, cos) pairs on a geometric frequency ladder 1 .. 1e4.
Eigen::VectorXd embed_condition(int tau, int k, int T, int K, int embed_dim);

// FiLM-conditioned MLP predicting diffusion noise.
//
//   film = W_f2 silu(W_f1 c + b_f1) + b_f2          (2 * hidden * layers)
//   z_l  = W_l h_{l-1} + b_l
//   h_l  = silu((1 + gamma_l) * z_l + beta_l)        gamma_l, beta_l from film
//   out  = W_o h_L + b_o
//
// Parameters live in one flat vector in the order
// film1.W, film1.b, film2.W, film2.b, hidden[0].W, hidden[0].b, ...,
// out.W, out.b, with column-major weight matrices.
template <class Scalar>
class FilmMlp {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;
  using VecMap = Eigen::Map<Vec>;
  using ConstVecMap = Eigen::Map<const Vec>;

  struct Slot {
    std::size_t w = 0;
    std::size_t b = 0;
    int rows = 0;
    int cols = 0;
  };

  FilmMlp() = default;
  FilmMlp(int state_dim, int hidden_dim, int layers, int cond_dim)
      : n_(state_dim), hidden_(hidden_dim), layers_(layers), cond_(cond_dim) {
    std::size_t off = 0;
    auto add = [&off](int rows, int cols) {
      Slot s{off, off + static_cast<std::size_t>(rows) * cols, rows, cols};
      off = s.b + static_cast<std::size_t>(rows);
      return s;
    };
    film1_ = add(cond_, cond_);
    film2_ = add(film_dim(), cond_);
    for (int l = 0; l < layers_; ++l) hidden_slots_.push_back(add(hidden_, l == 0 ? n_ : hidden_));
    out_ = add(n_, hidden_);
    params_.assign(off, Scalar(0));
  }

  int state_dim() const { return n_; }
  int hidden_dim() const { return hidden_; }
  int layers() const { return layers_; }
  int cond_dim() const { return cond_; }
  int film_dim() const { return 2 * hidden_ * layers_; }
  std::size_t param_count() const { return params_.size(); }
  ParamVector<Scalar>& params() { return params_; }
  const ParamVector<Scalar>& params() const { return params_; }

  // Kaiming-uniform weights, zero biases, zero output layer.
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&](const Slot& s) {
      const double bound = std::sqrt(6.0 / s.cols);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t i = s.w; i < s.b; ++i) params_[i] = static_cast<Scalar>(u(rng));
      for (int i = 0; i < s.rows; ++i) params_[s.b + static_cast<std::size_t>(i)] = Scalar(0);
    };
    fill(film1_);
    fill(film2_);
    for (const auto& s : hidden_slots_) fill(s);
    std::fill(params_.begin() + static_cast<std::ptrdiff_t>(out_.w), params_.end(), Scalar(0));
  }

  // FiLM coefficients for each column of `cond`.
  void film(const Mat& cond, Mat& g) const {
    Mat a = (W(film1_) * cond).colwise() + b(film1_);
    silu_inplace(a);
    g.noalias() = W(film2_) * a;
    g.colwise() += b(film2_);
  }

  // Forward with per-column FiLM (g.cols() == x.cols()) or one broadcast
  // FiLM column (g.cols() == 1).
  void forward(const Mat& x, const Mat& g, Mat& out) const {
    Mat h = x;
    Mat z;
    for (int l = 0; l < layers_; ++l) {
      const Slot& s = hidden_slots_[static_cast<std::size_t>(l)];
      z.noalias() = W(s) * h;
      z.colwise() += b(s);
      apply_film(z, g, l);
      silu_inplace(z);
      h.swap(z);
      if (!h.allFinite()) {
        throw NumericError("non-finite activation in hidden layer " + std::to_string(l));
      }
    }
    out.noalias() = W(out_) * h;
    out.colwise() += b(out_);
  }

  // Mean over columns of ||out - eps||^2 and its gradient w.r.t. every
  // parameter (grad is resized to param_count()).
  Scalar loss_and_grad(const Mat& x_tau, const Mat& cond, const Mat& eps,
                       ParamVector<Scalar>& grad) const {
    const Eigen::Index B = x_tau.cols();
    grad.assign(params_.size(), Scalar(0));

    Mat f1 = (W(film1_) * cond).colwise() + b(film1_);
    Mat a = f1;
    silu_inplace(a);
    Mat g = (W(film2_) * a).colwise() + b(film2_);

    std::vector<Mat> hs(static_cast<std::size_t>(layers_) + 1);
    std::vector<Mat> zs(static_cast<std::size_t>(layers_));
    std::vector<Mat> us(static_cast<std::size_t>(layers_));
    hs[0] = x_tau;
    for (int l = 0; l < layers_; ++l) {
      const auto li = static_cast<std::size_t>(l);
      const Slot& s = hidden_slots_[li];
      zs[li] = (W(s) * hs[li]).colwise() + b(s);
      us[li] = zs[li];
      apply_film(us[li], g, l);
      hs[li + 1] = us[li];
      silu_inplace(hs[li + 1]);
    }
    Mat out = (W(out_) * hs.back()).colwise() + b(out_);
    Mat resid = out - eps;
    const Scalar loss = resid.squaredNorm() / static_cast<Scalar>(B);

    Mat d_out = resid * (Scalar(2) / static_cast<Scalar>(B));
    Gw(grad, out_).noalias() = d_out * hs.back().transpose();
    Gb(grad, out_) = d_out.rowwise().sum();
    Mat dh = W(out_).transpose() * d_out;

    Mat dg(film_dim(), B);
    for (int l = layers_ - 1; l >= 0; --l) {
      const auto li = static_cast<std::size_t>(l);
      const Slot& s = hidden_slots_[li];
      Mat du = dh.array() * silu_grad(us[li]).array();
      auto scale = g.middleRows(2 * hidden_ * l, hidden_);
      auto shift_rows = dg.middleRows(2 * hidden_ * l + hidden_, hidden_);
      dg.middleRows(2 * hidden_ * l, hidden_) = du.cwiseProduct(zs[li]);
      shift_rows = du;
      Mat dz = du.array() * (scale.array() + Scalar(1));
      Gw(grad, s).noalias() = dz * hs[li].transpose();
      Gb(grad, s) = dz.rowwise().sum();
      if (l > 0) dh.noalias() = W(s).transpose() * dz;
    }

    Gw(grad, film2_).noalias() = dg * a.transpose();
    Gb(grad, film2_) = dg.rowwise().sum();
    Mat da = W(film2_).transpose() * dg;
    Mat df1 = da.array() * silu_grad(f1).array();
    Gw(grad, film1_).noalias() = df1 * cond.transpose();
    Gb(grad, film1_) = df1.rowwise().sum();
    return loss;
  }

  template <class Other>
  FilmMlp<Other> cast() const {
    FilmMlp<Other> o(n_, hidden_, layers_, cond_);
    for (std::size_t i = 0; i < params_.size(); ++i) o.params()[i] = static_cast<Other>(params_[i]);
    return o;
  }

 private:
  ConstMatMap W(const Slot& s) const { return ConstMatMap(params_.data() + s.w, s.rows, s.cols); }
  ConstVecMap b(const Slot& s) const { return ConstVecMap(params_.data() + s.b, s.rows); }
  static MatMap Gw(ParamVector<Scalar>& g, const Slot& s) { return MatMap(g.data() + s.w, s.rows, s.cols); }
  static VecMap Gb(ParamVector<Scalar>& g, const Slot& s) { return VecMap(g.data() + s.b, s.rows); }

  void apply_film(Mat& z, const Mat& g, int l) const {
    auto scale = g.middleRows(2 * hidden_ * l, hidden_);
    auto shift = g.middleRows(2 * hidden_ * l + hidden_, hidden_);
    if (g.cols() == 1) {
      z.array().colwise() *= (scale.array() + Scalar(1)).col(0);
      z.colwise() += shift.col(0);
    } else {
      z.array() = z.array() * (scale.array() + Scalar(1)) + shift.array();
    }
  }

  static void silu_inplace(Mat& x) {
    x.array() = x.array() / (Scalar(1) + (-x.array()).exp());
  }

  static Mat silu_grad(const Mat& x) {
    Mat s = (Scalar(1) / (Scalar(1) + (-x.array()).exp())).matrix();
    return (s.array() * (Scalar(1) + x.array() * (Scalar(1) - s.array()))).matrix();
  }

  int n_ = 0;
  int hidden_ = 0;
  int layers_ = 0;
  int cond_ = 0;
  Slot film1_;
  Slot film2_;
  std::vector<Slot> hidden_slots_;
  Slot out_;
  ParamVector<Scalar> params_;
};

// Decoupled-weight-decay Adam over a flat parameter vector.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  template <class Scalar>
  void step(ParamVector<Scalar>& params, const ParamVector<Scalar>& grad) {
    if (m_.empty()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double gi = grad[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * gi;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * gi * gi;
      if (lr_ == 0.0) continue;
      double p = params[i];
      p -= lr_ * wd_ * p;
      p -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
      params[i] = static_cast<Scalar>(p);
    }
  }

 private:
  double lr_;
  double wd_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

struct DenoiserModel {
  DenoiserConfig config;
  std::size_t n = 0;
  int K = 1;
  int T = 1000;
  std::uint64_t schedule_hash = 0;
  Normalizer normalizer;
  FilmMlp<float> net;
  std::vector<double> loss_curve;  // initial batch loss, then per-epoch means
  std::map<std::string, std::string> provenance;

  std::uint64_t param_hash() const;
};

// Builds an untrained model (initialized parameters).
DenoiserModel make_denoiser(std::size_t n, int K, const NoiseSchedule& schedule,
                            const Normalizer& normalizer,
                            const DenoiserConfig& config);

// Conditioning matrix (cond_dim x B) for per-column (tau, k).
template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> condition_matrix(
    std::span<const int> taus, std::span<const int> ks, int T, int K, int embed_dim) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> c(2 * embed_dim,
                                                          static_cast<Eigen::Index>(taus.size()));
  for (std::size_t b = 0; b < taus.size(); ++b) {
    c.col(static_cast<Eigen::Index>(b)) =
        embed_condition(taus[b], ks[b], T, K, embed_dim).cast<Scalar>();
  }
  return c;
}

// DDPM objective on a batch of clean normalized states (columns of x0, step
// ks): draws tau ~ U{1..T} and eps ~ N(0, I) per column from rng, forms
// x_tau, and returns the loss with gradients.
template <class Scalar>
Scalar diffusion_loss_and_grad(const FilmMlp<Scalar>& net,
                               const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x0,
                               std::span<const int> ks, int K, int embed_dim,
                               const NoiseSchedule& schedule, std::mt19937_64& rng,
                               ParamVector<Scalar>& grad) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index B = x0.cols();
  if (B == 0) throw ContractViolation("diffusion_loss_and_grad: empty batch");
  std::uniform_int_distribution<int> tau_dist(1, schedule.T());
  std::normal_distribution<double> normal;
  std::vector<int> taus(static_cast<std::size_t>(B));
  Mat eps(x0.rows(), B);
  Mat x_tau(x0.rows(), B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const int tau = tau_dist(rng);
    taus[static_cast<std::size_t>(b)] = tau;
    const double ab = schedule.alpha_bar(tau);
    const Scalar sa = static_cast<Scalar>(std::sqrt(ab));
    const Scalar sn = static_cast<Scalar>(std::sqrt(1.0 - ab));
    for (Eigen::Index d = 0; d < x0.rows(); ++d) eps(d, b) = static_cast<Scalar>(normal(rng));
    x_tau.col(b) = sa * x0.col(b) + sn * eps.col(b);
  }
  Mat cond = condition_matrix<Scalar>(taus, ks, schedule.T(), K, embed_dim);
  return net.loss_and_grad(x_tau, cond, eps, grad);
}

struct TrainOptions {
  // Called after every epoch with (epoch index, mean loss).
  std::function<void(int, double)> on_epoch;
};

// Fits the normalizer on the training trajectories, then trains with AdamW
// over shuffled mini-batches of (trajectory, step) pairs.
DenoiserModel train(const Dataset& ds, std::span<const std::size_t> train_ids,
                    const NoiseSchedule& schedule, const DenoiserConfig& config,
                    const TrainOptions& options = {});

// NoisePredictor view of a trained model. FiLM coefficients for the listed
// diffusion steps are precomputed for every k.
class DenoiserPredictor : public NoisePredictor {
 public:
  DenoiserPredictor(std::shared_ptr<const DenoiserModel> model,
                    std::span<const int> cached_taus);
  std::size_t dim() const override { return model_->n; }
  void predict(const Eigen::MatrixXd& x_tau, int tau, int k,
               Eigen::MatrixXd& eps_hat) const override;

 private:
  Eigen::MatrixXf film_column(int tau, int k) const;

  std::shared_ptr<const DenoiserModel> model_;
  std::map<std::pair<int, int>, Eigen::MatrixXf> cache_;
};

// Checkpoint: u64 metadata length, JSON metadata, f32 parameters in layout
// order, u64 CRC-64 of all preceding bytes. Little-endian.
void save_checkpoint(const DenoiserModel& model, const std::filesystem::path& path);
DenoiserModel load_checkpoint(const std::filesystem::path& path);

}  // namespace reachcal
