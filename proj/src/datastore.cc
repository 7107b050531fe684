#include "reachcal/datastore.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "reachcal/crc64.h"
#include "reachcal/errors.h"
#include "reachcal/random.h"

namespace reachcal {
namespace {

constexpr char kMagic[4] = {'R', 'C', 'H', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 4 + 3 * 8 + 8;

template <class U>
void put_le(std::vector<std::byte>& out, U value) {
  for (std::size_t b = 0; b < sizeof(U); ++b) {
    out.push_back(static_cast<std::byte>((value >> (8 * b)) & 0xFF));
  }
}

template <class U>
U get_le(std::span<const std::byte> in, std::size_t offset) {
  U value = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) {
    value |= static_cast<U>(std::to_integer<std::uint8_t>(in[offset + b]))
             << (8 * b);
  }
  return value;
}

}  // namespace

Dataset::Dataset(std::size_t N, std::size_t K, std::size_t n, double dt)
    : N(N), K(K), n(n), dt(dt), states(N * K * n, 0.0f) {}

Eigen::MatrixXd Dataset::step_matrix(std::span<const std::size_t> ids,
                                     std::size_t k) const {
  Eigen::MatrixXd m(ids.size(), n);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto s = at(ids[r], k);
    for (std::size_t d = 0; d < n; ++d) m(r, d) = s[d];
  }
  return m;
}

void Dataset::validate() const {
  if (N < 1 || K < 1 || n < 1) {
    throw ContractViolation("dataset dimensions must be >= 1");
  }
  if (states.size() != N * K * n) {
    throw ContractViolation("dataset payload size does not match N*K*n");
  }
  for (std::size_t idx = 0; idx < states.size(); ++idx) {
    if (!std::isfinite(states[idx])) {
      throw NumericError("dataset contains a non-finite value at flat index " +
                         std::to_string(idx));
    }
  }
}

SplitIndex split(std::size_t N, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train <= 0 || ratios.cal <= 0 || ratios.test <= 0 ||
      std::abs(ratios.train + ratios.cal + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  auto n_train = static_cast<std::size_t>(std::floor(N * ratios.train + 1e-9));
  auto n_cal = static_cast<std::size_t>(std::floor(N * ratios.cal + 1e-9));
  if (n_train + n_cal > N) n_cal = N - n_train;
  std::size_t n_test = N - n_train - n_cal;
  if (n_train == 0 || n_cal == 0 || n_test == 0) {
    throw ConfigError("split of " + std::to_string(N) +
                      " trajectories leaves an empty partition");
  }
  std::vector<std::size_t> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(derive_key({seed, 0x5911ULL}));
  std::shuffle(perm.begin(), perm.end(), rng);

  SplitIndex s;
  s.seed = seed;
  s.train_ids.assign(perm.begin(), perm.begin() + n_train);
  s.cal_ids.assign(perm.begin() + n_train, perm.begin() + n_train + n_cal);
  s.test_ids.assign(perm.begin() + n_train + n_cal, perm.end());
  std::sort(s.train_ids.begin(), s.train_ids.end());
  std::sort(s.cal_ids.begin(), s.cal_ids.end());
  std::sort(s.test_ids.begin(), s.test_ids.end());
  return s;
}

SplitIndex split(const Dataset& ds, const SplitRatios& ratios,
                 std::uint64_t seed) {
  return split(ds.N, ratios, seed);
}

Normalizer::Normalizer(Eigen::VectorXd mean, Eigen::VectorXd std)
    : mean_(std::move(mean)), std_(std::move(std)) {
  if (mean_.size() != std_.size()) {
    throw ContractViolation("normalizer mean/std size mismatch");
  }
  std_ = std_.cwiseMax(kStdFloor);
}

Eigen::VectorXd Normalizer::apply(const Eigen::VectorXd& x) const {
  return (x - mean_).cwiseQuotient(std_);
}

Eigen::VectorXd Normalizer::invert(const Eigen::VectorXd& z) const {
  return z.cwiseProduct(std_) + mean_;
}

void Normalizer::apply_columns(Eigen::MatrixXd& xs) const {
  xs.colwise() -= mean_;
  xs.array().colwise() /= std_.array();
}

Normalizer fit_normalizer(const Dataset& ds, std::span<const std::size_t> ids) {
  if (ids.empty()) throw ContractViolation("fit_normalizer: empty id list");
  const std::size_t n = ds.n;
  // Two-pass in double for stability.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  for (std::size_t i : ids) {
    for (std::size_t k = 0; k < ds.K; ++k) {
      auto s = ds.at(i, k);
      for (std::size_t d = 0; d < n; ++d) mean[d] += s[d];
    }
  }
  const double count = static_cast<double>(ids.size() * ds.K);
  mean /= count;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(n);
  for (std::size_t i : ids) {
    for (std::size_t k = 0; k < ds.K; ++k) {
      auto s = ds.at(i, k);
      for (std::size_t d = 0; d < n; ++d) {
        double c = s[d] - mean[d];
        var[d] += c * c;
      }
    }
  }
  var /= count;
  return Normalizer(mean, var.cwiseSqrt());
}

std::vector<std::byte> encode_dataset(const Dataset& ds) {
  std::vector<std::byte> out;
  out.reserve(kHeaderSize + ds.states.size() * 4 + 8);
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, ds.N);
  put_le<std::uint64_t>(out, ds.K);
  put_le<std::uint64_t>(out, ds.n);
  put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(ds.dt));
  const std::size_t payload_begin = out.size();
  for (float v : ds.states) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  std::uint64_t crc = crc64(std::span<const std::byte>(out).subspan(payload_begin));
  put_le<std::uint64_t>(out, crc);
  return out;
}

Dataset decode_dataset(std::span<const std::byte> bytes) {
  if (bytes.size() < 4) throw FormatError("truncated dataset: missing magic", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad dataset magic, expected \"RCHD\"", 0);
  }
  if (bytes.size() < kHeaderSize) {
    throw FormatError("truncated dataset header", bytes.size());
  }
  auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version), 4);
  }
  const auto N = get_le<std::uint64_t>(bytes, 8);
  const auto K = get_le<std::uint64_t>(bytes, 16);
  const auto n = get_le<std::uint64_t>(bytes, 24);
  const double dt = std::bit_cast<double>(get_le<std::uint64_t>(bytes, 32));
  if (N == 0 || K == 0 || n == 0) {
    throw FormatError("dataset header has a zero dimension", 8);
  }
  const std::uint64_t count = N * K * n;
  if (count / N / K != n || count > (bytes.size() - kHeaderSize) / 4) {
    throw FormatError("truncated dataset payload", bytes.size());
  }
  const std::size_t payload_end = kHeaderSize + count * 4;
  if (bytes.size() < payload_end + 8) {
    throw FormatError("truncated dataset: missing checksum", bytes.size());
  }
  if (bytes.size() != payload_end + 8) {
    throw FormatError("trailing bytes after dataset checksum", payload_end + 8);
  }
  auto payload = bytes.subspan(kHeaderSize, count * 4);
  if (crc64(payload) != get_le<std::uint64_t>(bytes, payload_end)) {
    throw FormatError("dataset checksum mismatch", payload_end);
  }
  Dataset ds(N, K, n, dt);
  for (std::uint64_t idx = 0; idx < count; ++idx) {
    ds.states[idx] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, kHeaderSize + idx * 4));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  auto bytes = encode_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

namespace {
std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  return bytes;
}
}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(read_file(path));
}

std::uint64_t file_crc64(const std::filesystem::path& path) {
  return crc64(read_file(path));
}

}  // namespace reachcal
