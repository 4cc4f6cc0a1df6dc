#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>

#include "facetpipe/text.hpp"
#include "support/paths.hpp"

using facetpipe::read_file;
using facetpipe::write_file;
using testing_support::fixture;
using testing_support::ScratchDir;
namespace fs = std::filesystem;

namespace {

int cli(const std::string& args, const fs::path& out) {
  const std::string cmd = std::string(FACETPIPE_CLI) + " " + args + " > " + out.string() + " 2> " + out.string() + ".err";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string toy_config(const fs::path& dir, const std::string& editing, const std::string& llm_kind = "mock") {
  const std::string f = fixture("").string();
  std::string text = "seed = 5\nrun_root = \"" + (dir / "runs").string() + "\"\nediting = \"" + editing + "\"\n";
  text += "[corpus]\ntrain = \"" + f + "toy_train.tsv\"\ntest = \"" + f + "toy_test.tsv\"\n";
  text += "[small_model]\nkind = \"mock\"\nmock_table = \"" + f + "mock_small.json\"\n";
  text += "[llm]\nkind = \"" + llm_kind + "\"\nendpoint_url = \"http://127.0.0.1:1/v1/completions\"\n";
  text += "max_retries = 0\ntimeout_ms = 200\nmock_table = \"" + f + "mock_llm.json\"\n";
  text += "[judge]\nkind = \"mock\"\nmock_table = \"" + f + "mock_judge.json\"\n";
  const fs::path path = dir / "config.toml";
  write_file(path.string(), text);
  return path.string();
}

}  // namespace

TEST(Cli, RunVerifyReportAndRerunEdit) {
  ScratchDir dir("cli-run");
  const fs::path out = dir.path() / "out.txt";
  ASSERT_EQ(cli("--config " + toy_config(dir.path(), "edit") + " run --run-id toy", out), 0) << read_file(out.string() + ".err");
  const fs::path run = dir.path() / "runs" / "toy";
  EXPECT_NE(read_file(out.string()).find("Term Overlap (F1)"), std::string::npos);
  EXPECT_EQ(cli("verify " + run.string(), out), 0);
  EXPECT_EQ(cli("report " + run.string() + " " + run.string(), out), 0);
  fs::remove(run / "predictions.edited.jsonl");
  EXPECT_EQ(cli("edit --run " + run.string(), out), 0) << read_file(out.string() + ".err");
  EXPECT_EQ(cli("verify " + run.string(), out), 0);
  EXPECT_EQ(cli("stats " + run.string(), out), 0);
  EXPECT_NE(read_file(out.string()).find("duplicate_proportion"), std::string::npos);
}

TEST(Cli, MockFlagReplacesHttpBackends) {
  ScratchDir dir("cli-mock");
  const fs::path out = dir.path() / "out.txt";
  const std::string cfg = toy_config(dir.path(), "edit", "http");
  EXPECT_EQ(cli("--config " + cfg + " run --run-id down", out), 3);
  EXPECT_EQ(cli("--config " + cfg + " --mock run --run-id mocked", out), 0) << read_file(out.string() + ".err");
}

TEST(Cli, ExitCodes) {
  ScratchDir dir("cli-codes");
  const fs::path out = dir.path() / "out.txt";
  EXPECT_EQ(cli("--config /nonexistent.toml run", out), 2);
  EXPECT_EQ(cli("frobnicate", out), 2);
  write_file((dir.path() / "bad.tsv").string(), "query\toption_1\toption_2\toption_3\toption_4\toption_5\nx\ty\n");
  EXPECT_EQ(cli("ingest " + (dir.path() / "bad.tsv").string(), out), 4);
  EXPECT_EQ(cli("report " + dir.path().string(), out), 4);
}

TEST(Cli, IngestBuildTasksGenerateEvaluate) {
  ScratchDir dir("cli-stages");
  const fs::path out = dir.path() / "out.txt";
  const fs::path corpus = dir.path() / "train.jsonl";
  ASSERT_EQ(cli("ingest " + fixture("toy_train.tsv").string() + " --serp " + fixture("toy_serp.json").string() +
                    " -o " + corpus.string(),
                out),
            0);
  const fs::path tasks = dir.path() / "tasks.jsonl";
  ASSERT_EQ(cli("build-tasks " + corpus.string() + " --tasks facet,document,related --mode QD -o " + tasks.string(), out), 0);
  const std::string t = read_file(tasks.string());
  EXPECT_NE(t.find("\"task\":\"document\""), std::string::npos);
  EXPECT_NE(t.find("</s>"), std::string::npos);

  const std::string cfg = toy_config(dir.path(), "none");
  const fs::path pred = dir.path() / "pred.jsonl";
  ASSERT_EQ(cli("--config " + cfg + " generate -o " + pred.string(), out), 0);
  ASSERT_EQ(cli("evaluate " + pred.string() + " " + fixture("toy_test.tsv").string(), out), 0);
  EXPECT_NE(read_file(out.string()).find("term_overlap_f1"), std::string::npos);
  ASSERT_EQ(cli("--config " + cfg + " judge " + pred.string() + " " + pred.string(), out), 0);
}
