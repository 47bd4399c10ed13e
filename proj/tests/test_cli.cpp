#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "docmt/corpus.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "docmt_cli_test";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Outcome {
  int code = -1;
  std::string err;
};

Outcome run(const std::string& args) {
  const fs::path err = kWork / "stderr.txt";
  const std::string cmd = std::string(DOCMT_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    std::ofstream(kWork / "cfg.json") << R"({
      "corpus": {"train_docs": 120, "dev_docs": 4, "test_docs": 6, "min_sents": 3, "max_sents": 4},
      "train": {"model": {"num_layers": 1, "model_width": 32, "num_heads": 2, "ffn_width": 64},
                "bpe_merges": 64, "steps": 20, "batch_size": 8, "warmup_steps": 10, "eval_every": 10, "eval_docs": 2},
      "adapt": {"alpha": 0.02, "lambda": 0.002, "steps": 2, "passes": 2}
    })";
    const std::string cfg = "--config " + (kWork / "cfg.json").string();
    ASSERT_EQ(run("gen " + cfg + " --out " + (kWork / "data").string()).code, 0);
    ASSERT_EQ(run("train " + cfg + " --data " + (kWork / "data").string() + " --out " + (kWork / "model").string()).code,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(kWork); }

  static std::string cfg() { return "--config " + (kWork / "cfg.json").string(); }
  static std::string decode(const std::string& out, const std::string& extra) {
    return "decode " + cfg() + " --checkpoint " + (kWork / "model" / "final").string() + " --data " +
           (kWork / "data" / "test.jsonl").string() + " --out " + (kWork / out).string() + " " + extra;
  }
};

}  // namespace

TEST_F(Cli, GenIsReproducible) {
  ASSERT_EQ(run("gen " + cfg() + " --out " + (kWork / "data2").string()).code, 0);
  for (const char* f : {"train.tsv", "dev.jsonl", "test.jsonl", "ambig.json"}) {
    EXPECT_EQ(slurp(kWork / "data" / f), slurp(kWork / "data2" / f)) << f;
  }
  EXPECT_EQ(docmt::load_jsonl(kWork / "data" / "test.jsonl").docs.size(), 6u);
  EXPECT_TRUE(fs::exists(kWork / "data" / "manifest.json"));
}

TEST_F(Cli, TrainWritesCheckpoints) {
  EXPECT_TRUE(fs::exists(kWork / "model" / "final.json"));
  EXPECT_TRUE(fs::exists(kWork / "model" / "ckpt-0000010.json"));
}

TEST_F(Cli, DecodeIsDeterministicAcrossJobs) {
  ASSERT_EQ(run(decode("a", "--mode selftrain --jobs 1")).code, 0);
  ASSERT_EQ(run(decode("b", "--mode selftrain --jobs 4")).code, 0);
  ASSERT_EQ(run(decode("c", "--mode selftrain --jobs 1")).code, 0);
  for (const char* f : {"results.jsonl", "metrics.json"}) {
    EXPECT_EQ(slurp(kWork / "a" / f), slurp(kWork / "b" / f)) << f;
    EXPECT_EQ(slurp(kWork / "a" / f), slurp(kWork / "c" / f)) << f;
  }
  EXPECT_TRUE(fs::exists(kWork / "a" / "timing.jsonl"));
}

TEST_F(Cli, OracleRejectsSecondPass) {
  const Outcome r = run(decode("o", "--oracle --passes 2"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("docmt-error[config]:", 0), 0u) << r.err;
  EXPECT_EQ(run(decode("o", "--oracle")).code, 0);
}

TEST_F(Cli, ErrorsHaveKindsAndExitCodes) {
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("decode --data x.jsonl").code, 2);  // missing --checkpoint
  const Outcome missing = run("decode --checkpoint " + (kWork / "nope").string() + " --data " +
                          (kWork / "data" / "test.jsonl").string() + " --out " + (kWork / "m").string());
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(missing.err.rfind("docmt-error[io]:", 0), 0u) << missing.err;
}

TEST_F(Cli, ReportNeedsTwoPairs) {
  ASSERT_EQ(run(decode("base", "--mode baseline")).code, 0);
  ASSERT_EQ(run(decode("self", "--mode selftrain")).code, 0);
  const std::string pair = (kWork / "base").string() + ":" + (kWork / "self").string();
  ASSERT_EQ(run("report --pair " + pair + " --out " + (kWork / "rep").string()).code, 0);
  EXPECT_TRUE(fs::exists(kWork / "rep" / "summary.json"));
  const Outcome r = run("report --length-pair " + pair + " --out " + (kWork / "rep2").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("docmt-error[insufficient-data]:", 0), 0u) << r.err;
}
