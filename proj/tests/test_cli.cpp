#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "astmask_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(ASTMASK_CLI) + " " + args + " >" + (kWork / "stdout").string() +
                          " 2>" + (kWork / "stderr").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string path(const std::string& name) { return (kWork / name).string(); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { fs::create_directories(kWork); }
  static void TearDownTestSuite() { fs::remove_all(kWork); }
};

}  // namespace

TEST_F(Cli, ParseAndLinearize) {
  std::ofstream(path("a.ml")) << "Double var = TEST_var.getValueAsDouble();\n";
  ASSERT_EQ(run("parse " + path("a.ml") + " --out " + path("a.json")), 0);
  const auto tree = nlohmann::json::parse(slurp(path("a.json")));
  EXPECT_EQ(tree["type"], "CompilationUnit");
  ASSERT_EQ(run("linearize " + path("a.json")), 0);
  EXPECT_NE(slurp(path("stdout")).find("name(SimpleName)"), std::string::npos);
}

TEST_F(Cli, ValidationErrorsExitOne) {
  std::ofstream(path("bad.ml")) << "x = 1;\ny = ;\n";
  EXPECT_EQ(run("parse " + path("bad.ml")), 1);
  EXPECT_NE(slurp(path("stderr")).find("2"), std::string::npos);
  EXPECT_EQ(run("parse " + path("missing.ml")), 1);
  EXPECT_EQ(run("gen --kind nonsense"), 1);
  EXPECT_EQ(run("finetune --task qa"), 1);
  std::ofstream(path("label2.jsonl")) << R"({"query":"q","code":"x = 1;","label":2})" << "\n";
  EXPECT_EQ(run("finetune --task qa --train " + path("label2.jsonl") + " --heldout " +
                path("label2.jsonl") + " --steps 0"),
            1);
  EXPECT_NE(slurp(path("stderr")).find("line 1"), std::string::npos);
}

TEST_F(Cli, RuntimeFailuresExitTwo) {
  EXPECT_EQ(run("gen --kind qa --n 2 --out " + path("no/such/dir/x.jsonl")), 2);
}

TEST_F(Cli, PipelineIsReproducible) {
  ASSERT_EQ(run("gen --kind corpus --n 30 --seed 1 --out " + path("corpus.jsonl")), 0);
  ASSERT_EQ(run("gen --kind clone --n 20 --seed 2 --out " + path("train.jsonl")), 0);
  ASSERT_EQ(run("gen --kind clone --n 10 --seed 3 --out " + path("test.jsonl")), 0);
  ASSERT_EQ(run("vocab --corpus " + path("corpus.jsonl") + " --data " + path("train.jsonl") +
                " --task clone --out " + path("vocab.txt")),
            0);
  for (const std::string run_id : {"1", "2"}) {
    ASSERT_EQ(run("pretrain --corpus " + path("corpus.jsonl") + " --vocab " + path("vocab.txt") +
                  " --steps 3 --batch-size 4 --d-model 16 --heads 2 --layers 1 --d-ff 32 --out " +
                  path("pre" + run_id + ".ckpt")),
              0)
        << slurp(path("stderr"));
    ASSERT_EQ(run("finetune --task clone --train " + path("train.jsonl") + " --heldout " +
                  path("test.jsonl") + " --checkpoint " + path("pre" + run_id + ".ckpt") +
                  " --steps 3 --batch-size 4 --max-len 128 --out " + path("ft" + run_id + ".ckpt") +
                  " --report " + path("report" + run_id + ".json")),
              0)
        << slurp(path("stderr"));
  }
  EXPECT_EQ(slurp(path("pre1.ckpt")), slurp(path("pre2.ckpt")));
  EXPECT_EQ(slurp(path("ft1.ckpt")), slurp(path("ft2.ckpt")));
  EXPECT_EQ(slurp(path("report1.json")), slurp(path("report2.json")));
  const auto report = nlohmann::json::parse(slurp(path("report1.json")));
  EXPECT_EQ(report["task"], "clone");
  EXPECT_EQ(report["n"], 10);
  EXPECT_TRUE(report.contains("f1"));
  EXPECT_EQ(report["fingerprint"].get<std::string>().size(), 16u);

  ASSERT_EQ(run("eval --task clone --checkpoint " + path("ft1.ckpt") + " --data " +
                path("test.jsonl") + " --max-len 128"),
            0)
      << slurp(path("stderr"));
  EXPECT_EQ(nlohmann::json::parse(slurp(path("stdout")))["f1"], report["f1"]);
}
