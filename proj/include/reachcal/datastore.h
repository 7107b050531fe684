#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace reachcal {

// N trajectories x K recorded steps x n state dimensions, stored as f32 in
// (trajectory, step, dimension) order.
struct Dataset {
  std::size_t N = 0;
  std::size_t K = 0;
  std::size_t n = 0;
  double dt = 0.0;
  std::string system_tag;
  std::uint64_t seed = 0;
  std::vector<float> states;

  Dataset() = default;
  Dataset(std::size_t N, std::size_t K, std::size_t n, double dt);

  std::span<float> at(std::size_t i, std::size_t k) {
    return {states.data() + (i * K + k) * n, n};
  }
  std::span<const float> at(std::size_t i, std::size_t k) const {
    return {states.data() + (i * K + k) * n, n};
  }

  // Rows = selected trajectories, columns = state dims, at step k.
  Eigen::MatrixXd step_matrix(std::span<const std::size_t> ids,
                              std::size_t k) const;

  void validate() const;
};

struct SplitIndex {
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> cal_ids;
  std::vector<std::size_t> test_ids;
  std::uint64_t seed = 0;
};

struct SplitRatios {
  double train = 0.6;
  double cal = 0.2;
  double test = 0.2;
};

// Uniformly random trajectory-level partition. Sizes are floor(N * ratio) for
// train and calibration; the test split receives the remainder.
SplitIndex split(const Dataset& ds, const SplitRatios& ratios,
                 std::uint64_t seed);
SplitIndex split(std::size_t N, const SplitRatios& ratios, std::uint64_t seed);

class Normalizer {
 public:
  static constexpr double kStdFloor = 1e-8;

  Normalizer() = default;
  Normalizer(Eigen::VectorXd mean, Eigen::VectorXd std);

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& std() const { return std_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::VectorXd invert(const Eigen::VectorXd& z) const;
  // In place on columns (each column one state).
  void apply_columns(Eigen::MatrixXd& xs) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd std_;
};

// Per-dimension mean/std over every (i, k) with i in ids.
Normalizer fit_normalizer(const Dataset& ds, std::span<const std::size_t> ids);

// Binary layout: "RCHD", u32 version=1, u64 N, u64 K, u64 n, f64 dt,
// N*K*n f32 values, u64 CRC-64 of the f32 block. All little-endian.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
std::vector<std::byte> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::byte> bytes);

std::uint64_t file_crc64(const std::filesystem::path& path);

}  // namespace reachcal
