#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "protoscale/config.hpp"

using namespace protoscale;

namespace {

std::string message_of(const std::string& text) {
  try {
    RunConfig::parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, CanonicalTextRoundTrips) {
  RunConfig cfg;
  cfg.model.grouping.semantic_prototypes = 7;
  cfg.model.grouping.cosine_logits = !cfg.model.grouping.cosine_logits;
  cfg.model.prior.sigma = 0.3125;
  cfg.train.ema_schedule = EmaSchedule::Cosine;
  cfg.optimizer.kind = OptimizerKind::Sgd;
  cfg.optimizer.learning_rate = 1.0 / 3.0;
  cfg.augment.jitter = 0.123456789012345;
  const std::string text = cfg.to_string();
  const RunConfig back = RunConfig::parse(text);
  EXPECT_EQ(back.to_string(), text);
  EXPECT_EQ(back.optimizer.learning_rate, cfg.optimizer.learning_rate);  // exact, not rounded
  EXPECT_EQ(back.augment.jitter, cfg.augment.jitter);
  EXPECT_EQ(back.model.grouping.semantic_prototypes, 7u);
}

TEST(RunConfig, EmptyTextGivesDefaults) {
  EXPECT_EQ(RunConfig::parse("").to_string(), RunConfig{}.to_string());
  EXPECT_EQ(RunConfig::parse("# only a comment\n\n").to_string(), RunConfig{}.to_string());
}

TEST(RunConfig, SectionsDottedKeysAndComments) {
  const RunConfig cfg = RunConfig::parse(
      "train.steps = 12  # trailing comment\n"
      "[grouping]\n"
      "semantic_prototypes = 5\n"
      "[model]\n"
      "channels = 8, 12, 16\n");
  EXPECT_EQ(cfg.train.steps, 12u);
  EXPECT_EQ(cfg.model.grouping.semantic_prototypes, 5u);
  EXPECT_EQ(cfg.model.encoder.channels[2], 16u);
}

TEST(RunConfig, ErrorsNameTheLine) {
  EXPECT_NE(message_of("[train]\nsteps = 3\nbogus = 1\n").find("line 3"), std::string::npos);
  EXPECT_NE(message_of("[train]\nbogus = 1\n").find("unknown key 'train.bogus'"), std::string::npos);
  EXPECT_NE(message_of("[train]\nsteps = 3\nsteps = 4\n").find("line 3: duplicate key"), std::string::npos);
  EXPECT_NE(message_of("[nowhere]\n").find("line 1: unknown section"), std::string::npos);
  EXPECT_NE(message_of("\n[train\n").find("line 2"), std::string::npos);
  EXPECT_NE(message_of("steps = 3\n").find("needs a section"), std::string::npos);
  EXPECT_NE(message_of("[train]\nsteps = many\n").find("train.steps"), std::string::npos);
  EXPECT_NE(message_of("[train]\nsteps 3\n").find("expected key = value"), std::string::npos);
  EXPECT_NE(message_of("[grouping]\ncosine_logits = maybe\n").find("boolean"), std::string::npos);
}

TEST(RunConfig, InvalidCombinationsRejected) {
  EXPECT_THROW(RunConfig::parse("model.dim = 30\nmodel.heads = 4\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("train.batch_size = 0\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("train.ema_momentum = 1.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("optimizer.learning_rate = -1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("augment.flip_probability = 2\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("model.channels = 1,2\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("grouping.semantic_prototypes = 0\n"), ConfigError);
}

TEST(RunConfig, GroupingDimFollowsEncoder) {
  const RunConfig cfg = RunConfig::parse("model.dim = 16\nmodel.heads = 4\n");
  EXPECT_EQ(cfg.model.grouping.dim, 16u);
}

TEST(RunConfig, OverridesReplaceValues) {
  RunConfig cfg = RunConfig::parse("[train]\nsteps = 3\n");
  cfg.set("train.steps=9");
  cfg.set(" model.dim = 16 ");
  EXPECT_EQ(cfg.train.steps, 9u);
  EXPECT_EQ(cfg.model.grouping.dim, 16u);
  EXPECT_THROW(cfg.set("train.nothing=1"), ConfigError);
  EXPECT_THROW(cfg.set("steps=1"), ConfigError);
  EXPECT_THROW(cfg.set("train.steps"), ConfigError);
}

TEST(RunConfig, LoadReportsPath) {
  const auto path = std::filesystem::temp_directory_path() / "protoscale_test_bad.cfg";
  std::ofstream(path) << "[train]\nunknown_thing = 1\n";
  try {
    RunConfig::load(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(RunConfig::load(path), IoError);
}
