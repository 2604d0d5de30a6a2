#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "jointvit/cli.hpp"
#include "test_util.hpp"

using namespace jointvit;
using jointvit::testing::read_file;
using jointvit::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "jointvit_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// A micro model and dataset so CLI round trips take well under a second.
fs::path small_config(const fs::path& dir) {
  RunConfig c;
  c.model.image_size = 8;
  c.model.patch_size = 4;
  c.model.embed_dim = 8;
  c.model.depth = 1;
  c.model.heads = 2;
  c.model.mlp_ratio = 2;
  c.data.synthetic.image_size = 8;
  c.data.synthetic.counts = {6, 12, 9};
  c.optimizer.lr = 1e-3;
  c.protocol.epochs = 2;
  c.protocol.batch_size = 8;
  const fs::path p = dir / "small.json";
  write_text_file(p, to_json(c).dump(2));
  return p;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(read_file(e.path()), read_file(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 0u);
}

}  // namespace

TEST(Cli, SynthWritesTheLongTailAndIsReproducible) {
  auto dir = scratch_dir("cli_synth");
  auto a = invoke({"--seed", "3", "--out", (dir / "a").string(), "synth"});
  auto b = invoke({"--seed", "3", "--out", (dir / "b").string(), "synth"});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NE(a.out.find("wrote 57 instances"), std::string::npos) << a.out;
  EXPECT_NE(a.out.find("Low=9, BorderlineLow=30, Normal=18"), std::string::npos) << a.out;
  EXPECT_EQ(lines(read_file(dir / "a/data/labels.csv")).size(), 58u);
  expect_same_tree(dir / "a/data", dir / "b/data");

  Dataset ds = load_image_folder(dir / "a/data", {.manifest = "labels.csv", .image_size = 64});
  EXPECT_EQ(ds.class_counts(), (ClassCounts{9, 30, 18}));
}

TEST(Cli, UnwritableOutputIsIoError) {
  auto dir = scratch_dir("cli_io");
  write_text_file(dir / "blocker", "not a directory");
  auto r = invoke({"--config", small_config(dir).string(), "--out", (dir / "blocker/run").string(),
                "synth"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error[io]: ", 0), 0u) << r.err;
  EXPECT_EQ(lines(r.err).size(), 1u);
}

TEST(Cli, ZeroEpochTrainWritesTheInitialization) {
  auto dir = scratch_dir("cli_init");
  const auto cfg = small_config(dir);
  auto r = invoke({"--config", cfg.string(), "--seed", "8", "--out", (dir / "run").string(), "train",
                "--epochs", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  Checkpoint ck = load_checkpoint(dir / "run/checkpoint");
  EXPECT_TRUE(ck.params == init_params(load_run_config(cfg).model, 8));
  EXPECT_EQ(ck.meta.step, 0u);
  EXPECT_EQ(lines(read_file(dir / "run/train_log.csv")),
            std::vector<std::string>{cli::kTrainLogHeader});
}

TEST(Cli, TrainLogsEveryStepAndResumeWithoutEpochsIsIdentity) {
  auto dir = scratch_dir("cli_resume");
  const auto cfg = small_config(dir);
  auto a = invoke({"--config", cfg.string(), "--out", (dir / "a").string(), "train"});
  ASSERT_EQ(a.code, 0) << a.err;
  Checkpoint ck = load_checkpoint(dir / "a/checkpoint");
  // 27 originals balanced to 3 x 12 = 36 slices, batch 8, 2 epochs.
  EXPECT_EQ(ck.meta.step, 10u);
  EXPECT_EQ(ck.meta.epoch, 2u);
  const auto log = lines(read_file(dir / "a/train_log.csv"));
  ASSERT_EQ(log.size(), 11u);
  EXPECT_EQ(log[0], cli::kTrainLogHeader);
  EXPECT_EQ(log[10].rfind("10,1,", 0), 0u) << log[10];

  auto b = invoke({"--out", (dir / "b").string(), "train", "--resume", (dir / "a/checkpoint").string(),
                "--epochs", "0", "--data", (dir / "nowhere").string()});
  EXPECT_EQ(b.code, 1);  // the data still has to exist
  b = invoke({"--config", cfg.string(), "--out", (dir / "b").string(), "train", "--resume",
           (dir / "a/checkpoint").string(), "--epochs", "0"});
  ASSERT_EQ(b.code, 0) << b.err;
  expect_same_tree(dir / "a/checkpoint", dir / "b/checkpoint");
}

TEST(Cli, ResumeRefusesAMismatchedConfig) {
  auto dir = scratch_dir("cli_mismatch");
  const auto cfg = small_config(dir);
  ASSERT_EQ(invoke({"--config", cfg.string(), "--out", (dir / "a").string(), "train", "--epochs", "0"})
                .code,
            0);
  RunConfig other = load_run_config(cfg);
  other.model.embed_dim = 16;
  write_text_file(dir / "other.json", to_json(other).dump());
  auto r = invoke({"--config", (dir / "other.json").string(), "--out", (dir / "b").string(), "train",
                "--resume", (dir / "a/checkpoint").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error[config]: ", 0), 0u) << r.err;
  EXPECT_NE(r.err.find(hex64(config_hash(other.model))), std::string::npos) << r.err;
}

TEST(Cli, EvalOnEmptyDatasetIsContractError) {
  auto dir = scratch_dir("cli_empty");
  const auto cfg = small_config(dir);
  ASSERT_EQ(invoke({"--config", cfg.string(), "--out", (dir / "run").string(), "train", "--epochs", "0"})
                .code,
            0);
  fs::create_directories(dir / "empty");
  write_text_file(dir / "empty/labels.csv", "file,sao2_percent\n");
  auto r = invoke({"--out", (dir / "run").string(), "eval", "--data", (dir / "empty").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err, "error[contract]: eval: dataset is empty\n");
}

TEST(Cli, EvalResizesFolderImagesToTheCheckpointInput) {
  auto dir = scratch_dir("cli_resize");
  const auto cfg = small_config(dir);
  ASSERT_EQ(invoke({"--config", cfg.string(), "--out", (dir / "run").string(), "train", "--epochs", "0"})
                .code,
            0);
  ASSERT_EQ(invoke({"--out", (dir / "syn").string(), "synth"}).code, 0);  // 64 x 64 images
  auto r = invoke({"--out", (dir / "run").string(), "eval", "--data", (dir / "syn/data").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json m = read_json_file(dir / "run/metrics.json");
  EXPECT_EQ(m.at("instances").get<std::size_t>(), 57u);
  std::size_t total = 0;
  for (const auto& row : m.at("confusion"))
    for (const auto& v : row) total += v.get<std::size_t>();
  EXPECT_EQ(total, 57u);
}

TEST(Cli, AblationAgreesWithSingleFoldTrainAndEval) {
  auto dir = scratch_dir("cli_ablate");
  const auto cfg = small_config(dir);
  auto a = invoke({"--config", cfg.string(), "--out", (dir / "ab").string(), "ablate", "--lambdas",
                "1.0"});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto rows = lines(read_file(dir / "ab/metrics.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "fold,lambda,variant,accuracy,sensitivity,specificity");
  EXPECT_EQ(lines(read_file(dir / "ab/lambda_curve.csv"))[0], "lambda,variant,metric,mean,std");

  for (std::size_t f = 0; f < 3; ++f) {
    const std::string out = (dir / ("fold" + std::to_string(f))).string();
    auto t = invoke({"--config", cfg.string(), "--out", out, "train", "--fold", std::to_string(f),
                  "--lambda", "1"});
    ASSERT_EQ(t.code, 0) << t.err;
    auto e = invoke({"--config", cfg.string(), "--out", out, "eval", "--fold", std::to_string(f),
                  "--lambda", "1"});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto single = lines(read_file(fs::path(out) / "metrics.csv"));
    ASSERT_EQ(single.size(), 2u);
    EXPECT_EQ(single[0], rows[0]);
    EXPECT_EQ(single[1], rows[1 + f]);
  }
}

TEST(Cli, AblationOutputsAreByteIdenticalAcrossRuns) {
  auto dir = scratch_dir("cli_ablate_twice");
  const auto cfg = small_config(dir);
  for (const char* name : {"a", "b"}) {
    auto r = invoke({"--config", cfg.string(), "--out", (dir / name).string(), "ablate", "--lambdas",
                  "0.9,1", "--variants", "bce,balbce"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* file : {"metrics.csv", "lambda_curve.csv", "metrics.json"})
    EXPECT_EQ(read_file(dir / "a" / file), read_file(dir / "b" / file)) << file;
  EXPECT_EQ(lines(read_file(dir / "a/metrics.csv")).size(), 1u + 4 * 3);
}

TEST(Cli, GradcheckPasses) {
  auto r = invoke({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out).size(), 3u);
  EXPECT_TRUE(r.err.empty()) << r.err;
}

TEST(Cli, UsageErrorsExitWithTwo) {
  auto none = invoke({});
  EXPECT_EQ(none.code, 2);
  EXPECT_EQ(none.err.rfind("error[usage]: ", 0), 0u);
  auto unknown = invoke({"frobnicate"});
  EXPECT_EQ(unknown.code, 2);
  auto bad_flag = invoke({"train", "--epochs", "many"});
  EXPECT_EQ(bad_flag.code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, ConfigErrorsAreReportedByKind) {
  auto dir = scratch_dir("cli_cfg");
  write_text_file(dir / "typo.json", R"({"modle": {}})");
  auto r = invoke({"--config", (dir / "typo.json").string(), "synth"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err, "error[config]: unknown config key 'modle'\n");
  auto v = invoke({"--config", small_config(dir).string(), "--out", (dir / "x").string(), "train",
                "--variant", "focal"});
  EXPECT_EQ(v.code, 1);
  EXPECT_EQ(v.err.rfind("error[config]: ", 0), 0u) << v.err;
  auto l = invoke({"--config", small_config(dir).string(), "--out", (dir / "x").string(), "ablate",
                "--lambdas", "0.9,x"});
  EXPECT_EQ(l.code, 1);
  EXPECT_EQ(l.err, "error[config]: --lambdas: 'x' is not a number\n");
}

TEST(CliBinary, ExitCodesAndStderrFromTheExecutable) {
  auto dir = scratch_dir("cli_binary");
  const std::string exe = JOINTVIT_CLI_PATH;
  const std::string err_file = (dir / "err.txt").string();
  int status = std::system((exe + " gradcheck > /dev/null 2> " + err_file).c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  status = std::system((exe + " --config " + (dir / "absent.json").string() + " synth 2> " +
                        err_file).c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 1);
  const auto err = lines(read_file(err_file));
  ASSERT_EQ(err.size(), 1u);
  EXPECT_EQ(err[0].rfind("error[io]: ", 0), 0u) << err[0];
}
