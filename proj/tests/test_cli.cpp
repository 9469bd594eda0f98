#include "cli.hpp"

#include <chrnn/checkpoint.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using chrnn::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("chrnn_cli_" + name);
  fs::remove_all(dir);
  return dir.string();
}

// A run small enough for a unit test.
std::vector<std::string> tiny_train(const std::string& out) {
  return {"train", "--out", out, "--epochs", "1", "--set", "data.synthetic_train=64",
          "--set", "data.synthetic_val=32", "--set", "model.fc=16", "--set", "train.batch=16"};
}

}  // namespace

TEST(Cli, AuditReferenceCounts) {
  EXPECT_EQ(invoke({"audit", "--paper", "--cell", "srn"}).out, "matrices=42 params=2752512\n");
  EXPECT_EQ(invoke({"audit", "--paper", "--cell", "lstm"}).out, "matrices=150 params=9830400\n");
}

TEST(Cli, AuditOfDefaultConfig) {
  const auto r = invoke({"audit", "--scales", "1,2"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("matrices="), std::string::npos);
}

TEST(Cli, GradcheckPassesAndNegativeControlFails) {
  const auto ok = invoke({"gradcheck", "--cell", "lstm", "--scales", "1,3", "--hidden", "4"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("gradcheck passed"), std::string::npos);
  const auto bad =
      invoke({"gradcheck", "--cell", "lstm", "--scales", "1,3", "--hidden", "4", "--corrupt-backward"});
  EXPECT_EQ(bad.code, chrnn::cli::kVerificationFailed) << bad.out;
  EXPECT_EQ(invoke({"gradcheck", "--scales", "1,6"}).code, chrnn::cli::kConfigError);
}

TEST(Cli, DegencheckPassesAndNegativeControlFails) {
  EXPECT_EQ(invoke({"degencheck", "--pyramids", "10"}).code, 0);
  EXPECT_EQ(invoke({"degencheck", "--pyramids", "10", "--zero-input"}).code, 0);
  EXPECT_EQ(invoke({"degencheck", "--pyramids", "10", "--perturb"}).code,
            chrnn::cli::kVerificationFailed);
}

TEST(Cli, ErrorsMapToExitCodes) {
  const auto unknown = invoke({"train", "--set", "train.speed=3", "--epochs", "0"});
  EXPECT_EQ(unknown.code, chrnn::cli::kConfigError);
  EXPECT_NE(unknown.err.find("train.speed"), std::string::npos) << unknown.err;

  EXPECT_EQ(invoke({"frobnicate"}).code, chrnn::cli::kConfigError);
  EXPECT_EQ(invoke({"train", "--set", "novalue"}).code, chrnn::cli::kConfigError);

  const auto missing = invoke({"train", "--task", "idx", "--train-images", "/nonexistent/a.idx",
                               "--train-labels", "/nonexistent/b.idx", "--out", temp_dir("missing")});
  EXPECT_EQ(missing.code, chrnn::cli::kDataError);
  EXPECT_NE(missing.err.find("/nonexistent/a.idx"), std::string::npos) << missing.err;

  auto diverge = tiny_train(temp_dir("diverge"));
  diverge.insert(diverge.end(), {"--set", "train.lr=1e12"});
  const auto nan = invoke(diverge);
  EXPECT_EQ(nan.code, chrnn::cli::kNumericError) << nan.err;
  EXPECT_NE(nan.err.find("epoch 1 step"), std::string::npos) << nan.err;
}

TEST(Cli, TrainWritesArtifactsAndEvaluateReadsThem) {
  const auto dir = temp_dir("train");
  const auto r = invoke(tiny_train(dir));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("epoch=1 split=train"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("epoch=1 split=val"), std::string::npos) << r.out;
  ASSERT_TRUE(fs::exists(fs::path(dir) / "model.ckpt"));
  ASSERT_TRUE(fs::exists(fs::path(dir) / "metrics.log"));
  ASSERT_TRUE(fs::exists(fs::path(dir) / "config.txt"));

  std::ifstream log(fs::path(dir) / "metrics.log");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) ++lines;
  EXPECT_EQ(lines, 2u);

  const auto e = invoke({"evaluate", "--checkpoint", (fs::path(dir) / "model.ckpt").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  // Same weights and validation set as the last training epoch.
  const auto val_line = r.out.substr(r.out.find("split=val") + 9);
  const auto top1 = val_line.substr(val_line.find("top1="), 11);
  EXPECT_NE(e.out.find(top1), std::string::npos) << e.out << " vs " << top1;

  EXPECT_EQ(invoke({"evaluate", "--checkpoint", "/nonexistent/model.ckpt"}).code,
            chrnn::cli::kDataError);
}

TEST(Cli, ResumeContinuesToRequestedEpochs) {
  const auto dir = temp_dir("resume");
  ASSERT_EQ(invoke(tiny_train(dir)).code, 0);
  const auto ckpt = (fs::path(dir) / "model.ckpt").string();
  auto args = tiny_train(dir);
  args[4] = "2";
  args.insert(args.end(), {"--resume", ckpt});
  const auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("epoch=1 "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("epoch=2 split=val"), std::string::npos) << r.out;

  const auto straight_dir = temp_dir("straight");
  auto straight = tiny_train(straight_dir);
  straight[4] = "2";
  ASSERT_EQ(invoke(straight).code, 0);
  // The embedded config text differs in `out`; weights and state must not.
  const auto resumed = chrnn::read_checkpoint(ckpt);
  const auto uninterrupted = chrnn::read_checkpoint((fs::path(straight_dir) / "model.ckpt").string());
  EXPECT_EQ(resumed.tensors, uninterrupted.tensors);
  EXPECT_EQ(resumed.state, uninterrupted.state);
}
