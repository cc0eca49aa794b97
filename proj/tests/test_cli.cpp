// Drives the built command-line tool end to end.
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "protoscale_test_cli";

int run(const std::string& args) {
  const std::string cmd = std::string(PROTOSCALE_CLI) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string p(const fs::path& path) { return "'" + path.string() + "'"; }

const char* kTinyModel =
    "--set model.input_size=32 --set model.channels=4,6,8 --set model.dim=8 --set model.heads=2 "
    "--set grouping.semantic_prototypes=4 --set grouping.auxiliary_prototypes=2 "
    "--set grouping.instance_prototypes=3 --set grouping.relation_dim=4 "
    "--set train.batch_size=2 --set train.checkpoint_every=2 --set train.log_every=1 --set train.seed=5";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    ASSERT_EQ(run("generate --count 6 --size 32 --seed 4 --out " + p(kRoot / "data")), 0);
    ASSERT_EQ(run("train --data " + p(kRoot / "data") + " --out " + p(kRoot / "run") + " " + kTinyModel +
                  " --set train.steps=4"),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("generate --count 3"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("eval --ckpt x --data y --out z --split test"), 2);
}

TEST_F(Cli, GenerateZeroScenes) {
  ASSERT_EQ(run("generate --count 0 --out " + p(kRoot / "empty")), 0);
  const auto j = nlohmann::json::parse(slurp(kRoot / "empty" / "manifest.json"));
  EXPECT_TRUE(j["scenes"].empty());
}

TEST_F(Cli, GenerateIsDeterministic) {
  ASSERT_EQ(run("generate --count 3 --size 32 --seed 4 --out " + p(kRoot / "again")), 0);
  for (const char* f : {"scenes/scene_00000.ppm", "scenes/scene_00002.ppm"})
    EXPECT_EQ(slurp(kRoot / "again" / f), slurp(kRoot / "data" / f)) << f;
  ASSERT_EQ(run("generate --count 3 --size 32 --seed 4 --out " + p(kRoot / "again2")), 0);
  EXPECT_EQ(slurp(kRoot / "again" / "manifest.json"), slurp(kRoot / "again2" / "manifest.json"));
}

TEST_F(Cli, TrainWritesRunDirectory) {
  const fs::path run_dir = kRoot / "run";
  for (const char* f : {"config.resolved", "metrics.csv", "latest.bin", "ckpt_000002.bin", "ckpt_000004.bin"})
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  const std::string resolved = slurp(run_dir / "config.resolved");
  EXPECT_NE(resolved.find("steps = 4"), std::string::npos);
  EXPECT_NE(resolved.find("semantic_prototypes = 4"), std::string::npos);
}

TEST_F(Cli, TrainRejectsBadConfig) {
  EXPECT_EQ(run("train --data " + p(kRoot / "data") + " --out " + p(kRoot / "bad") + " --set train.nope=1"), 2);
  // model input size must match the dataset
  EXPECT_EQ(run("train --data " + p(kRoot / "data") + " --out " + p(kRoot / "bad") + " --set train.steps=1"), 2);
  EXPECT_EQ(run("train --data " + p(kRoot / "missing") + " --out " + p(kRoot / "bad") + " " + kTinyModel), 3);
}

TEST_F(Cli, ConfigFileWithOverride) {
  std::ofstream(kRoot / "run.cfg") << "[train]\nsteps = 50\n";
  ASSERT_EQ(run("train --config " + p(kRoot / "run.cfg") + " --data " + p(kRoot / "data") + " --out " +
                p(kRoot / "cfgrun") + " " + kTinyModel + " --set train.steps=1"),
            0);
  EXPECT_NE(slurp(kRoot / "cfgrun" / "config.resolved").find("steps = 1\n"), std::string::npos);
}

TEST_F(Cli, ResumeAtFinalStepDoesNothing) {
  const std::string before = slurp(kRoot / "run" / "latest.bin");
  ASSERT_EQ(run("train --data " + p(kRoot / "data") + " --out " + p(kRoot / "run") + " " + kTinyModel +
                " --set train.steps=4 --resume " + p(kRoot / "run" / "latest.bin")),
            0);
  EXPECT_NE(slurp(kRoot / "last.log").find("nothing to do"), std::string::npos);
  EXPECT_EQ(slurp(kRoot / "run" / "latest.bin"), before);
}

TEST_F(Cli, EvalIsRepeatable) {
  const std::string args = "eval --ckpt " + p(kRoot / "run" / "latest.bin") + " --data " + p(kRoot / "data");
  ASSERT_EQ(run(args + " --out " + p(kRoot / "eval1")), 0);
  ASSERT_EQ(run(args + " --out " + p(kRoot / "eval2")), 0);
  EXPECT_EQ(slurp(kRoot / "eval1" / "metrics.json"), slurp(kRoot / "eval2" / "metrics.json"));
  const auto j = nlohmann::json::parse(slurp(kRoot / "eval1" / "metrics.json"));
  EXPECT_EQ(j["step"], 4);
  EXPECT_TRUE(j.contains("instance_ari"));
}

TEST_F(Cli, EvalExportsMaps) {
  ASSERT_EQ(run("eval --ckpt " + p(kRoot / "run" / "latest.bin") + " --data " + p(kRoot / "data") + " --split train" +
                " --export-maps --export-count 2 --out " + p(kRoot / "export")),
            0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(kRoot / "export" / "maps")) files += e.is_regular_file();
  // per scene and scale: 4 + 3 + 3 maps plus one overlay
  EXPECT_EQ(files, 2u * 3u * 11u);
}

TEST_F(Cli, CorruptCheckpointExitsFive) {
  fs::copy_file(kRoot / "run" / "latest.bin", kRoot / "corrupt.bin", fs::copy_options::overwrite_existing);
  {
    std::fstream f(kRoot / "corrupt.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    char c = 0;
    f.read(&c, 1);
    f.seekp(40);
    c = static_cast<char>(c ^ 0x5a);
    f.write(&c, 1);
  }
  EXPECT_EQ(run("eval --ckpt " + p(kRoot / "corrupt.bin") + " --data " + p(kRoot / "data") + " --out " +
                p(kRoot / "never")),
            5);
  EXPECT_EQ(run("eval --ckpt " + p(kRoot / "nope.bin") + " --data " + p(kRoot / "data") + " --out " +
                p(kRoot / "never")),
            3);
}
