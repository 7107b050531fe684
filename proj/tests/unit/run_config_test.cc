#include "reachcal/run_config.h"

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "reachcal/errors.h"

namespace reachcal {
namespace {

using nlohmann::json;

TEST(RunConfig, Defaults) {
  const RunConfig cfg = run_config_from_json(json::object());
  EXPECT_TRUE(std::holds_alternative<DuffingSystem>(cfg.system));
  EXPECT_EQ(cfg.N, 20000u);
  EXPECT_EQ(cfg.K, 30u);
  EXPECT_EQ(cfg.dt, 0.1);
  EXPECT_EQ(cfg.schedule.T, 1000);
  EXPECT_EQ(cfg.score.taus, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(cfg.score.repeats, 8);
  EXPECT_EQ(cfg.alpha, 0.05);
  EXPECT_EQ(cfg.delta, 0.2);
  EXPECT_EQ(cfg.grid_L, 2000u);
  EXPECT_EQ(cfg.eval_steps().size(), 30u);
}

TEST(RunConfig, UnknownKeysAreNamed) {
  try {
    run_config_from_json(json{{"dataset", {{"N", 10}, {"Kk", 3}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("dataset.Kk"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_config_from_json(json{{"sead", 1}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"score", {{"weighting", "log"}}}}), ConfigError);
}

TEST(RunConfig, InvalidValues) {
  EXPECT_THROW(run_config_from_json(json{{"budget", {{"alpha", 0.0}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"evaluation", {{"steps", {30}}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"system", {{"type", "quadrotor"}}}}), ConfigError);
  EXPECT_NO_THROW(run_config_from_json(
      json{{"system", {{"type", "quadrotor"}}}, {"dataset", {{"K", 1}}}}));
  EXPECT_THROW(run_config_from_json(json{{"system", {{"type", "pendulum"}}}}), ConfigError);
}

TEST(RunConfig, JsonRoundTripPreservesHash) {
  const json in{{"system", {{"type", "duffing"}, {"c", 0.05}}},
                {"dataset", {{"N", 500}, {"K", 5}, {"dt", 0.2}}},
                {"seed", 17},
                {"score", {{"taus", {5, 10}}, {"repeats", 2}, {"weighting", "elbo"}}},
                {"evaluation", {{"steps", {0, 4}}, {"cells", 32}}}};
  const RunConfig a = run_config_from_json(in);
  const RunConfig b = run_config_from_json(to_json(a));
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(std::get<DuffingSystem>(b.system).params.c, 0.05);
  EXPECT_EQ(b.eval_steps(), (std::vector<int>{0, 4}));

  RunConfig c = a;
  c.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(c));
  c.N = 501;
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(RunConfig, SeedDerivesStreams) {
  RunConfig a, b;
  a.set_seed(1);
  b.set_seed(2);
  EXPECT_NE(a.denoiser.seed, b.denoiser.seed);
  EXPECT_NE(a.score.seed, a.denoiser.seed);
  EXPECT_EQ(a.denoiser.seed, a.train_seed());
  EXPECT_EQ(a.score.seed, a.score_seed());
}

TEST(RunConfig, LoadFromFileWithComments) {
  const auto path = std::filesystem::temp_directory_path() / "reachcal_cfg.json";
  std::ofstream(path) << "{\n  // small run\n  \"dataset\": {\"N\": 40}\n}\n";
  EXPECT_EQ(load_run_config(path).N, 40u);
  std::filesystem::remove(path);
  EXPECT_THROW(load_run_config(path), Error);
}

TEST(Hex64, FixedWidth) {
  EXPECT_EQ(hex64(0x1f), "000000000000001f");
}

}  // namespace
}  // namespace reachcal
