#include "reachcal/datastore.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "reachcal/errors.h"

namespace reachcal {
namespace {

Dataset gaussian_dataset(std::size_t N, std::size_t K, std::size_t n, std::uint64_t seed,
                         double mean = 0.0, double sd = 1.0) {
  Dataset ds(N, K, n, 0.1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mean, sd);
  for (auto& v : ds.states) v = static_cast<float>(d(rng));
  return ds;
}

std::vector<std::size_t> all_ids(std::size_t N) {
  std::vector<std::size_t> ids(N);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("reachcal_" + name);
}

TEST(Split, SizesFollowRatios) {
  const auto s = split(10, SplitRatios{}, 1);
  EXPECT_EQ(s.train_ids.size(), 6u);
  EXPECT_EQ(s.cal_ids.size(), 2u);
  EXPECT_EQ(s.test_ids.size(), 2u);
}

TEST(Split, DeterministicInSeed) {
  const auto a = split(1000, SplitRatios{}, 42);
  const auto b = split(1000, SplitRatios{}, 42);
  const auto c = split(1000, SplitRatios{}, 43);
  EXPECT_EQ(a.train_ids, b.train_ids);
  EXPECT_EQ(a.cal_ids, b.cal_ids);
  EXPECT_EQ(a.test_ids, b.test_ids);
  EXPECT_NE(a.cal_ids, c.cal_ids);
}

TEST(Split, PartitionCoversEveryIndexOnce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t N = 3 + rng() % 500;
    std::uniform_real_distribution<double> u(0.1, 1.0);
    double a = u(rng), b = u(rng), c = u(rng);
    const double sum = a + b + c;
    SplitRatios r{a / sum, b / sum, c / sum};
    SplitIndex s;
    try {
      s = split(N, r, rng());
    } catch (const ConfigError&) {
      continue;
    }
    std::vector<std::size_t> seen;
    for (const auto* part : {&s.train_ids, &s.cal_ids, &s.test_ids}) {
      seen.insert(seen.end(), part->begin(), part->end());
    }
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(seen, all_ids(N));
  }
}

TEST(Split, EmptyPartitionIsConfigError) {
  EXPECT_THROW(split(2, SplitRatios{}, 1), ConfigError);
  EXPECT_THROW(split(100, SplitRatios{0.9, 0.1, 0.0}, 1), ConfigError);
}

TEST(Split, PartitionsAreStatisticallyAlike) {
  const auto ds = gaussian_dataset(10000, 3, 2, 9, 1.0, 2.0);
  const auto s = split(ds, SplitRatios{}, 4);
  for (std::size_t k = 0; k < ds.K; ++k) {
    for (std::size_t d = 0; d < ds.n; ++d) {
      std::vector<double> means, ses;
      for (const auto* part : {&s.train_ids, &s.cal_ids, &s.test_ids}) {
        const auto m = ds.step_matrix(*part, k);
        const double mean = m.col(d).mean();
        const double var = (m.col(d).array() - mean).square().sum() / (m.rows() - 1);
        means.push_back(mean);
        ses.push_back(std::sqrt(var / m.rows()));
      }
      for (int i = 0; i < 3; ++i) {
        for (int j = i + 1; j < 3; ++j) {
          EXPECT_LT(std::abs(means[i] - means[j]), 3 * std::hypot(ses[i], ses[j]));
        }
      }
    }
  }
}

TEST(Normalizer, ConstantDataHitsFloor) {
  Dataset ds(5, 2, 1, 0.1);
  std::fill(ds.states.begin(), ds.states.end(), 3.0f);
  const auto norm = fit_normalizer(ds, all_ids(5));
  EXPECT_EQ(norm.std()[0], Normalizer::kStdFloor);
  EXPECT_EQ(norm.apply(Eigen::VectorXd::Constant(1, 3.0))[0], 0.0);
}

TEST(Normalizer, StandardizesByDefinition) {
  const Normalizer norm(Eigen::Vector2d(5, 0), Eigen::Vector2d(2, 1));
  EXPECT_EQ(norm.apply(Eigen::Vector2d(7, 0))[0], 1.0);
}

TEST(Normalizer, RoundTrip) {
  const auto ds = gaussian_dataset(200, 4, 3, 2, 10.0, 3.0);
  const auto norm = fit_normalizer(ds, all_ids(200));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0, 50);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd x(3);
    for (int j = 0; j < 3; ++j) x[j] = d(rng);
    EXPECT_LT((norm.invert(norm.apply(x)) - x).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Normalizer, TrainingDataIsStandardized) {
  const auto ds = gaussian_dataset(3000, 5, 3, 8, -4.0, 0.5);
  const auto ids = all_ids(ds.N);
  const auto norm = fit_normalizer(ds, ids);
  Eigen::MatrixXd all(static_cast<Eigen::Index>(ds.N * ds.K), 3);
  for (std::size_t k = 0; k < ds.K; ++k) {
    all.middleRows(static_cast<Eigen::Index>(k * ds.N), static_cast<Eigen::Index>(ds.N)) =
        ds.step_matrix(ids, k);
  }
  Eigen::MatrixXd cols = all.transpose();
  norm.apply_columns(cols);
  for (Eigen::Index d = 0; d < 3; ++d) {
    const double mean = cols.row(d).mean();
    const double sd = std::sqrt((cols.row(d).array() - mean).square().mean());
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_NEAR(sd, 1.0, 1e-4);
  }
}

TEST(DatasetFile, RoundTripIsBitIdentical) {
  auto ds = gaussian_dataset(7, 3, 2, 4);
  ds.dt = 0.25;
  const auto path = temp_file("roundtrip.rchd");
  save_dataset(ds, path);
  const auto back = load_dataset(path);
  EXPECT_EQ(back.N, 7u);
  EXPECT_EQ(back.K, 3u);
  EXPECT_EQ(back.n, 2u);
  EXPECT_EQ(back.dt, 0.25);
  ASSERT_EQ(back.states.size(), ds.states.size());
  EXPECT_EQ(std::memcmp(back.states.data(), ds.states.data(), ds.states.size() * sizeof(float)), 0);
  std::filesystem::remove(path);
}

TEST(DatasetFile, LayoutIsLittleEndianWithHeader) {
  Dataset ds(1, 1, 1, 0.5);
  ds.states = {1.0f};
  const auto bytes = encode_dataset(ds);
  ASSERT_EQ(bytes.size(), 4u + 4 + 24 + 8 + 4 + 8);
  EXPECT_EQ(static_cast<char>(bytes[0]), 'R');
  EXPECT_EQ(static_cast<char>(bytes[3]), 'D');
  EXPECT_EQ(static_cast<int>(bytes[4]), 1);
  EXPECT_EQ(static_cast<int>(bytes[8]), 1);
  // f32 1.0 = 0x3F800000
  EXPECT_EQ(static_cast<int>(bytes[43]), 0x3F);
  EXPECT_EQ(static_cast<int>(bytes[42]), 0x80);
}

TEST(DatasetFile, TruncationIsFormatError) {
  const auto bytes = encode_dataset(gaussian_dataset(3, 2, 2, 1));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() - 1}) {
    std::span<const std::byte> part(bytes.data(), cut);
    EXPECT_THROW(decode_dataset(part), FormatError) << cut;
  }
}

TEST(DatasetFile, WrongMagicNamesExpectedTag) {
  auto bytes = encode_dataset(gaussian_dataset(3, 2, 2, 1));
  bytes[0] = std::byte{'X'};
  try {
    decode_dataset(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("RCHD"), std::string::npos);
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(DatasetFile, CorruptPayloadFailsChecksum) {
  auto bytes = encode_dataset(gaussian_dataset(3, 2, 2, 1));
  bytes[45] ^= std::byte{0x01};
  EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(DatasetFile, UnsupportedVersion) {
  auto bytes = encode_dataset(gaussian_dataset(3, 2, 2, 1));
  bytes[4] = std::byte{2};
  try {
    decode_dataset(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
}

}  // namespace
}  // namespace reachcal
