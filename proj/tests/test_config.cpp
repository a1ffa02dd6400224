#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "fpe/config.hpp"
#include "test_support.hpp"

using namespace fpe;

TEST(Config, DefaultsMatchTheReferenceConstants) {
  const EngineConfig c;
  EXPECT_EQ(c.runs, 5);
  EXPECT_DOUBLE_EQ(c.gamma, 0.6);
  EXPECT_FALSE(c.gamma_inclusive);
  EXPECT_DOUBLE_EQ(c.tau_sim, 0.75);
  EXPECT_EQ(c.budget, 2000);
  EXPECT_DOUBLE_EQ(c.alpha, 1.0);
  EXPECT_DOUBLE_EQ(c.tau_h_quantile, 0.8);
  EXPECT_DOUBLE_EQ(c.tau_ann, 0.5);
  EXPECT_EQ(c.dedup_hamming, 5);
  EXPECT_DOUBLE_EQ(c.tfidf_cos, 0.90);
  EXPECT_DOUBLE_EQ(c.plateau_eps, 0.005);
  EXPECT_EQ(c.patience, 1);
  EXPECT_EQ(c.k_min, 2u);
  EXPECT_EQ(c.k_max, 20u);
  EXPECT_DOUBLE_EQ(c.lambda, 1.0);
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, EmitParseRoundTrip) {
  EngineConfig c;
  c.alpha = 0.25;
  c.tau_h = 1.5;
  c.force_route = annotate::Route::AdoptOracle;
  c.strategy = Strategy::Random;
  c.quality_gate = false;
  c.world.base_error = {0.3, 0.45, 0.6};
  c.world.pool_size = 1234;
  c.model = "http://127.0.0.1:9000";
  reseed(c, 11);
  const auto text = emit_config(c);
  EXPECT_EQ(parse_config(text), c);
  EXPECT_EQ(emit_config(parse_config(text)), text);
}

TEST(Config, CommentsAndSections) {
  const auto c = parse_config(
      "# top\n"
      "[engine]\n"
      "alpha = 0.5  # inline\n"
      "budget = 10\n"
      "[clients]\n"
      "model = \"http://h/#frag\"\n"
      "[world]\n"
      "base_error = [0.1, 0.2, 0.3]\n");
  EXPECT_DOUBLE_EQ(c.alpha, 0.5);
  EXPECT_EQ(c.budget, 10);
  EXPECT_EQ(c.model, "http://h/#frag");
  EXPECT_EQ(c.world.base_error, (std::vector<double>{0.1, 0.2, 0.3}));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("[engine]\nnope = 1\n"), ValidationError);
  EXPECT_THROW(parse_config("[engine]\ngamma = 1.0\n"), ValidationError);
  EXPECT_THROW(parse_config("[engine]\ntau_sim = \"x\"\n"), ValidationError);
  EXPECT_THROW(parse_config("[engine]\nk_min = 1\n"), ValidationError);
  EXPECT_THROW(parse_config("[engine]\nalpha = -1.0\n"), ValidationError);
  EXPECT_THROW(parse_config("[loop]\nstrategy = \"greedy\"\n"), ValidationError);
  EXPECT_THROW(parse_config("[loop]\nreviewer = \"bob\"\n"), ValidationError);
  EXPECT_THROW(parse_config("[engine\n"), ValidationError);
  EXPECT_THROW(parse_config("[engine]\nalpha\n"), ValidationError);
  // Mock clients must follow the engine seed.
  EXPECT_THROW(parse_config("[engine]\nseed = 9\n"), ValidationError);
  EXPECT_THROW(parse_config("[world]\nk = 40\nbase_error = [0.1]\n"), ValidationError);
}

TEST(Config, ValidateNamesTheConstant) {
  EngineConfig c;
  c.tau_ann = 2.0;
  try {
    validate(c);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("tau_ann"), std::string::npos);
  }
}

TEST(Config, RelativePathsResolveAgainstTheFile) {
  test::TempDir dir;
  std::filesystem::create_directories(dir / "conf");
  std::ofstream(dir / "conf/fpe.toml") << "[paths]\nstore = \"s\"\nartifacts = \"/abs/a\"\n";
  const auto c = load_config(dir / "conf/fpe.toml");
  EXPECT_EQ(c.store, dir / "conf/s");
  EXPECT_EQ(c.artifacts, std::filesystem::path("/abs/a"));
}

TEST(Config, EnvironmentFallback) {
  test::TempDir dir;
  std::ofstream(dir / "env.toml") << "[engine]\nalpha = 0.125\n";
  ::setenv("FPE_CONFIG", (dir / "env.toml").c_str(), 1);
  EXPECT_DOUBLE_EQ(load_config_or_default(std::nullopt).alpha, 0.125);
  std::ofstream(dir / "explicit.toml") << "[engine]\nalpha = 2.0\n";
  EXPECT_DOUBLE_EQ(load_config_or_default(dir / "explicit.toml").alpha, 2.0);
  ::unsetenv("FPE_CONFIG");
  EXPECT_DOUBLE_EQ(load_config_or_default(std::nullopt).alpha, 1.0);
}

TEST(Config, ReseedMovesEveryMockClient) {
  EngineConfig c;
  c.oracle = "https://oracle.example";
  reseed(c, 42);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.world.seed, 42u);
  EXPECT_EQ(c.model, "mock:42");
  EXPECT_EQ(c.trainer, "mock:42");
  EXPECT_EQ(c.oracle, "https://oracle.example");
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, StrategyNames) {
  EXPECT_EQ(parse_strategy("random"), Strategy::Random);
  EXPECT_EQ(to_string(Strategy::FailureDriven), "failure_driven");
  EXPECT_THROW(parse_strategy("x"), ValidationError);
}
