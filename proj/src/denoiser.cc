#include "reachcal/denoiser.h"

#include <algorithm>
#include <bit>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "reachcal/crc64.h"
#include "reachcal/random.h"

namespace reachcal {

void DenoiserConfig::validate() const {
  if (layers < 1) throw ConfigError("denoiser: layers must be >= 1");
  if (hidden_dim < 1) throw ConfigError("denoiser: hidden_dim must be >= 1");
  if (embed_dim < 2 || embed_dim % 2 != 0) {
    throw ConfigError("denoiser: embed_dim must be even and >= 2");
  }
  if (!(lr >= 0)) throw ConfigError("denoiser: lr must be >= 0");
  if (weight_decay < 0) throw ConfigError("denoiser: weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("denoiser: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("denoiser: epochs must be >= 0");
}

Eigen::VectorXd embed_condition(int tau, int k, int T, int K, int embed_dim) {
  if (tau < 1 || tau > T) {
    throw ContractViolation("embed_condition: tau " + std::to_string(tau) + " outside [1, T]");
  }
  if (k < 0 || k >= K) {
    throw ContractViolation("embed_condition: k " + std::to_string(k) + " outside [0, K)");
  }
  if (embed_dim < 2 || embed_dim % 2 != 0) {
    throw ContractViolation("embed_condition: embed_dim must be even");
  }
  const int pairs = embed_dim / 2;
  Eigen::VectorXd e(2 * embed_dim);
  const double pos[2] = {static_cast<double>(tau) / T, static_cast<double>(k) / K};
  for (int half = 0; half < 2; ++half) {
    for (int j = 0; j < pairs; ++j) {
      const double freq = pairs == 1 ? 1.0 : std::pow(1e4, static_cast<double>(j) / (pairs - 1));
      e[half * embed_dim + 2 * j] = std::sin(freq * pos[half]);
      e[half * embed_dim + 2 * j + 1] = std::cos(freq * pos[half]);
    }
  }
  return e;
}

std::uint64_t DenoiserModel::param_hash() const {
  return crc64(std::as_bytes(std::span<const float>(net.params())));
}

DenoiserModel make_denoiser(std::size_t n, int K, const NoiseSchedule& schedule,
                            const Normalizer& normalizer,
                            const DenoiserConfig& config) {
  config.validate();
  DenoiserModel m;
  m.config = config;
  m.n = n;
  m.K = K;
  m.T = schedule.T();
  m.schedule_hash = schedule.hash();
  m.normalizer = normalizer;
  m.net = FilmMlp<float>(static_cast<int>(n), config.hidden_dim, config.layers,
                         2 * config.embed_dim);
  m.net.init(derive_key({config.seed, 0x1417ULL}));
  return m;
}

DenoiserModel train(const Dataset& ds, std::span<const std::size_t> train_ids,
                    const NoiseSchedule& schedule, const DenoiserConfig& config,
                    const TrainOptions& options) {
  if (train_ids.empty()) throw ContractViolation("train: empty training split");
  config.validate();
  Normalizer normalizer = fit_normalizer(ds, train_ids);
  DenoiserModel model = make_denoiser(ds.n, static_cast<int>(ds.K), schedule, normalizer, config);

  // Normalized training states, one column per (trajectory, step).
  const std::size_t count = train_ids.size() * ds.K;
  Eigen::MatrixXf data(static_cast<Eigen::Index>(ds.n), static_cast<Eigen::Index>(count));
  std::vector<int> steps(count);
  {
    std::size_t col = 0;
    for (std::size_t i : train_ids) {
      for (std::size_t k = 0; k < ds.K; ++k, ++col) {
        auto s = ds.at(i, k);
        for (std::size_t d = 0; d < ds.n; ++d) {
          data(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(col)) =
              static_cast<float>((s[d] - normalizer.mean()[static_cast<Eigen::Index>(d)]) /
                                 normalizer.std()[static_cast<Eigen::Index>(d)]);
        }
        steps[col] = static_cast<int>(k);
      }
    }
  }

  std::mt19937_64 rng(derive_key({config.seed, 0x7A1DULL}));
  AdamW opt(config.lr, config.weight_decay);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  ParamVector<float> grad;
  const auto B = static_cast<std::size_t>(config.batch_size);
  Eigen::MatrixXf batch;
  std::vector<int> batch_k;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < count; start += B) {
      const std::size_t end = std::min(count, start + B);
      batch.resize(data.rows(), static_cast<Eigen::Index>(end - start));
      batch_k.resize(end - start);
      for (std::size_t j = start; j < end; ++j) {
        batch.col(static_cast<Eigen::Index>(j - start)) = data.col(static_cast<Eigen::Index>(order[j]));
        batch_k[j - start] = steps[order[j]];
      }
      const float loss = diffusion_loss_and_grad<float>(
          model.net, batch, batch_k, model.K, config.embed_dim, schedule, rng, grad);
      if (!std::isfinite(loss)) {
        throw NumericError("training loss is non-finite at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches));
      }
      if (epoch == 0 && batches == 0) model.loss_curve.push_back(loss);
      opt.step(model.net.params(), grad);
      loss_sum += loss;
      ++batches;
    }
    const double mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, batches));
    model.loss_curve.push_back(mean_loss);
    spdlog::debug("epoch {}/{} loss {:.6f}", epoch + 1, config.epochs, mean_loss);
    if (options.on_epoch) options.on_epoch(epoch, mean_loss);
  }
  return model;
}

DenoiserPredictor::DenoiserPredictor(std::shared_ptr<const DenoiserModel> model,
                                     std::span<const int> cached_taus)
    : model_(std::move(model)) {
  if (!model_) throw ContractViolation("DenoiserPredictor: null model");
  for (int tau : cached_taus) {
    for (int k = 0; k < model_->K; ++k) cache_.emplace(std::make_pair(tau, k), film_column(tau, k));
  }
}

Eigen::MatrixXf DenoiserPredictor::film_column(int tau, int k) const {
  Eigen::MatrixXf cond = embed_condition(tau, k, model_->T, model_->K, model_->config.embed_dim)
                             .cast<float>();
  Eigen::MatrixXf g;
  model_->net.film(cond, g);
  return g;
}

void DenoiserPredictor::predict(const Eigen::MatrixXd& x_tau, int tau, int k,
                                Eigen::MatrixXd& eps_hat) const {
  Eigen::MatrixXf xf = x_tau.cast<float>();
  Eigen::MatrixXf out;
  auto it = cache_.find({tau, k});
  if (it != cache_.end()) {
    model_->net.forward(xf, it->second, out);
  } else {
    model_->net.forward(xf, film_column(tau, k), out);
  }
  eps_hat = out.cast<double>();
}

namespace {

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::byte>((v >> (8 * b)) & 0xFF));
}

std::uint64_t get_u64(std::span<const std::byte> in, std::size_t off) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) {
    v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(in[off + static_cast<std::size_t>(b)])) << (8 * b);
  }
  return v;
}

std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_checkpoint(const DenoiserModel& model, const std::filesystem::path& path) {
  nlohmann::json meta;
  const auto& c = model.config;
  meta["format"] = "reachcal-denoiser";
  meta["version"] = 1;
  meta["config"] = {{"hidden_dim", c.hidden_dim}, {"layers", c.layers},
                    {"embed_dim", c.embed_dim},   {"lr", c.lr},
                    {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
                    {"epochs", c.epochs},         {"seed", c.seed}};
  meta["state_dim"] = model.n;
  meta["K"] = model.K;
  meta["T"] = model.T;
  meta["schedule_hash"] = model.schedule_hash;
  meta["normalizer"] = {{"mean", to_vec(model.normalizer.mean())},
                        {"std", to_vec(model.normalizer.std())}};
  meta["param_count"] = model.net.param_count();
  meta["layout"] = {"film1.W", "film1.b", "film2.W", "film2.b", "hidden[l].W",
                    "hidden[l].b", "out.W", "out.b"};
  meta["loss_curve"] = model.loss_curve;
  meta["provenance"] = model.provenance;
  const std::string text = meta.dump();

  std::vector<std::byte> bytes;
  put_u64(bytes, text.size());
  for (char ch : text) bytes.push_back(static_cast<std::byte>(ch));
  for (float p : model.net.params()) {
    const auto u = std::bit_cast<std::uint32_t>(p);
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::byte>((u >> (8 * b)) & 0xFF));
  }
  put_u64(bytes, crc64(bytes));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

DenoiserModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::span<const std::byte> bytes(reinterpret_cast<const std::byte*>(raw.data()), raw.size());
  if (bytes.size() < 16) throw FormatError("truncated checkpoint", bytes.size());
  const std::uint64_t meta_len = get_u64(bytes, 0);
  if (meta_len > bytes.size() - 16) throw FormatError("truncated checkpoint metadata", 8);
  const std::size_t body = bytes.size() - 8;
  if (crc64(bytes.first(body)) != get_u64(bytes, body)) {
    throw FormatError("checkpoint checksum mismatch", body);
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(std::string(raw.data() + 8, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what(), 8);
  }
  if (meta.value("format", "") != "reachcal-denoiser") {
    throw FormatError("not a reachcal denoiser checkpoint", 8);
  }
  DenoiserModel m;
  const auto& c = meta.at("config");
  m.config.hidden_dim = c.at("hidden_dim");
  m.config.layers = c.at("layers");
  m.config.embed_dim = c.at("embed_dim");
  m.config.lr = c.at("lr");
  m.config.weight_decay = c.at("weight_decay");
  m.config.batch_size = c.at("batch_size");
  m.config.epochs = c.at("epochs");
  m.config.seed = c.at("seed");
  m.n = meta.at("state_dim");
  m.K = meta.at("K");
  m.T = meta.at("T");
  m.schedule_hash = meta.at("schedule_hash");
  m.normalizer = Normalizer(from_vec(meta.at("normalizer").at("mean")),
                            from_vec(meta.at("normalizer").at("std")));
  m.loss_curve = meta.at("loss_curve").get<std::vector<double>>();
  m.provenance = meta.at("provenance").get<std::map<std::string, std::string>>();
  m.net = FilmMlp<float>(static_cast<int>(m.n), m.config.hidden_dim, m.config.layers,
                         2 * m.config.embed_dim);
  const std::size_t count = meta.at("param_count");
  if (count != m.net.param_count()) {
    throw FormatError("checkpoint parameter count does not match its architecture", 8);
  }
  const std::size_t off = 8 + meta_len;
  if (off + count * 4 != body) throw FormatError("checkpoint parameter block has wrong size", off);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) {
      u |= static_cast<std::uint32_t>(std::to_integer<std::uint8_t>(bytes[off + 4 * i + static_cast<std::size_t>(b)])) << (8 * b);
    }
    m.net.params()[i] = std::bit_cast<float>(u);
  }
  return m;
}

}  // namespace reachcal
