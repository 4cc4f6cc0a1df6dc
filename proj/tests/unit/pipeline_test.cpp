#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "facetpipe/error.hpp"
#include "facetpipe/pipeline.hpp"
#include "facetpipe/text.hpp"
#include "support/paths.hpp"

using namespace facetpipe;
using testing_support::fixture;
using testing_support::ScratchDir;
namespace fs = std::filesystem;

namespace {

ExperimentConfig toy(const std::string& name, const fs::path& run_root) {
  ExperimentConfig c = load_config(fixture(name).string());
  c.run_root = run_root.string();
  return c;
}

nlohmann::json manifest_json(const fs::path& dir) {
  return nlohmann::json::parse(read_file((dir / "manifest.json").string()));
}

}  // namespace

TEST(Config, ParsesToyFileAndResolvesPaths) {
  const ExperimentConfig c = load_config(fixture("toy_edit.toml").string());
  EXPECT_EQ(c.seed, 13u);
  EXPECT_EQ(c.editing, EditingMode::kEdit);
  EXPECT_EQ(c.test_path, fixture("toy_test.tsv").lexically_normal().string());
  EXPECT_EQ(c.llm.kind, BackendKind::kMock);
  EXPECT_FALSE(c.llm.mock_rules.empty());
  EXPECT_TRUE(c.judge_enabled);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("sed = 1\n", "."), ConfigError);
  EXPECT_THROW(parse_config("editing = \"rewrite\"\n", "."), ConfigError);
  EXPECT_THROW(parse_config("seed = \"x\"\n", "."), ConfigError);
  EXPECT_THROW(parse_config("seed = [\n", "."), ConfigError);
}

TEST(Config, EditWithoutTrainIsInvalid) {
  ExperimentConfig c = parse_config("editing = \"edit\"\n[corpus]\ntest = \"t.tsv\"\n", ".");
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, JsonRoundTripKeepsHash) {
  const ExperimentConfig c = load_config(fixture("toy_edit.toml").string());
  EXPECT_EQ(config_hash(config_from_json(config_to_json(c))), config_hash(c));
}

TEST(Config, SecretsStayOutOfJson) {
  ExperimentConfig c = load_config(fixture("toy_none.toml").string());
  c.llm.headers["Authorization"] = "Bearer sekret";
  EXPECT_EQ(config_to_json(c).find("sekret"), std::string::npos);
}

TEST(Run, NoEditingHasTwoStages) {
  ScratchDir dir("run-none");
  const ExperimentConfig c = toy("toy_none.toml", dir.path());
  const RunManifest m = run_experiment(c, load_experiment_corpus(c), {"r1"});
  ASSERT_EQ(m.stages.size(), 2u);
  EXPECT_EQ(m.stages[0].name, "generate");
  EXPECT_EQ(m.stages[1].name, "score");
  EXPECT_EQ(m.final_predictions, "predictions.small.jsonl");
  EXPECT_TRUE(fs::exists(m.run_dir / "metrics.json"));
  EXPECT_TRUE(verify_run(m.run_dir).ok);
}

TEST(Run, EditHasThreeStagesAndTwoPredictionFiles) {
  ScratchDir dir("run-edit");
  ExperimentConfig c = toy("toy_edit.toml", dir.path());
  c.judge_enabled = false;
  const RunManifest m = run_experiment(c, load_experiment_corpus(c), {"r1"});
  ASSERT_EQ(m.stages.size(), 3u);
  EXPECT_EQ(m.stages[1].name, "edit");
  EXPECT_TRUE(fs::exists(m.run_dir / "predictions.small.jsonl"));
  EXPECT_TRUE(fs::exists(m.run_dir / "predictions.edited.jsonl"));
  const auto edited = read_predictions((m.run_dir / "predictions.edited.jsonl").string());
  EXPECT_EQ(edited[0].query, "carrots");
  EXPECT_EQ(edited[0].facets, (std::vector<std::string>{"carrots nutrition", "carrots health benefits", "carrots recipes"}));
  const auto j = manifest_json(m.run_dir);
  EXPECT_EQ(j["demonstrations"].size(), 3u);
  EXPECT_EQ(j["templates"].size(), 4u);
  EXPECT_EQ(j["status"], "ok");
}

TEST(Run, JudgeStageWritesVerdicts) {
  ScratchDir dir("run-judge");
  const ExperimentConfig c = toy("toy_edit.toml", dir.path());
  const RunManifest m = run_experiment(c, load_experiment_corpus(c), {"r1"});
  ASSERT_EQ(m.stages.size(), 4u);
  ASSERT_TRUE(m.judge.has_value());
  EXPECT_EQ(m.judge->a_wins + m.judge->b_wins + m.judge->excluded, m.judge->total);
  EXPECT_EQ(m.judge->total, 10u);
  EXPECT_TRUE(verify_run(m.run_dir).ok);
}

TEST(Run, SameSeedIsByteIdentical) {
  ScratchDir dir("run-det");
  const ExperimentConfig c = toy("toy_edit.toml", dir.path());
  const Corpus corpus = load_experiment_corpus(c);
  const RunManifest a = run_experiment(c, corpus);
  const RunManifest b = run_experiment(c, corpus);
  EXPECT_NE(a.run_id, b.run_id);
  for (const char* f : {"predictions.small.jsonl", "predictions.edited.jsonl", "metrics.json", "judge.jsonl"}) {
    EXPECT_EQ(read_file((a.run_dir / f).string()), read_file((b.run_dir / f).string())) << f;
  }
}

TEST(Run, VerifyDetectsTamperingAndStrayFiles) {
  ScratchDir dir("run-verify");
  const ExperimentConfig c = toy("toy_none.toml", dir.path());
  const RunManifest m = run_experiment(c, load_experiment_corpus(c), {"r1"});
  write_file((m.run_dir / "stray.txt").string(), "x");
  EXPECT_FALSE(verify_run(m.run_dir).ok);
  fs::remove(m.run_dir / "stray.txt");
  write_file((m.run_dir / "metrics.json").string(), "{}");
  const VerifyResult v = verify_run(m.run_dir);
  EXPECT_FALSE(v.ok);
  ASSERT_EQ(v.problems.size(), 1u);
  EXPECT_NE(v.problems[0].find("metrics.json"), std::string::npos);
}

TEST(Run, EditStageReproducesAfterDeletion) {
  ScratchDir dir("run-rerun");
  ExperimentConfig c = toy("toy_edit.toml", dir.path());
  c.judge_enabled = false;
  const RunManifest m = run_experiment(c, load_experiment_corpus(c), {"r1"});
  const std::string before = read_file((m.run_dir / "predictions.edited.jsonl").string());
  fs::remove(m.run_dir / "predictions.edited.jsonl");
  EXPECT_TRUE(rerun_edit_stage(m.run_dir));
  EXPECT_EQ(read_file((m.run_dir / "predictions.edited.jsonl").string()), before);
}

TEST(Run, FailedStageIsRecorded) {
  ScratchDir dir("run-fail");
  ExperimentConfig c = toy("toy_edit.toml", dir.path());
  c.llm.kind = BackendKind::kHttp;
  c.llm.endpoint_url = "http://127.0.0.1:1/v1/completions";
  c.llm.max_retries = 0;
  c.llm.timeout_ms = 200;
  EXPECT_THROW(run_experiment(c, load_experiment_corpus(c), {"r1"}), BackendError);
  const auto j = manifest_json(dir.path() / "r1");
  EXPECT_EQ(j["status"], "failed");
  EXPECT_EQ(j["stages"].back()["name"], "edit");
  EXPECT_EQ(j["stages"].back()["status"], "failed");
  EXPECT_FALSE(j["stages"].back()["error"].get<std::string>().empty());
}

TEST(Run, ZeroAndFewShotModes) {
  ScratchDir dir("run-llm-only");
  ExperimentConfig c = toy("toy_edit.toml", dir.path());
  c.judge_enabled = false;
  c.editing = EditingMode::kZeroShot;
  RunManifest m = run_experiment(c, load_experiment_corpus(c), {"zero"});
  EXPECT_EQ(m.final_predictions, "predictions.zero_shot.jsonl");
  EXPECT_EQ(m.stages.size(), 2u);
  c.editing = EditingMode::kFewShot;
  m = run_experiment(c, load_experiment_corpus(c), {"few"});
  EXPECT_EQ(m.final_predictions, "predictions.few_shot.jsonl");
  EXPECT_TRUE(verify_run(m.run_dir).ok);
}

TEST(Report, RowsInGivenOrderAndMissingScoreNamed) {
  ScratchDir dir("report");
  const ExperimentConfig c = toy("toy_none.toml", dir.path());
  const Corpus corpus = load_experiment_corpus(c);
  run_experiment(c, corpus, {"beta"});
  run_experiment(c, corpus, {"alpha"});
  const std::string table = report({dir.path() / "beta", dir.path() / "alpha"});
  EXPECT_LT(table.find("beta"), table.find("alpha"));
  fs::remove(dir.path() / "alpha" / "metrics.json");
  try {
    report({dir.path() / "alpha"});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos);
  }
}

TEST(Compare, IdenticalRunsWithAJudge) {
  ScratchDir dir("compare");
  const ExperimentConfig c = toy("toy_none.toml", dir.path());
  const Corpus corpus = load_experiment_corpus(c);
  run_experiment(c, corpus, {"a"});
  run_experiment(c, corpus, {"b"});
  MockBackend judge(parse_mock_rules(R"([{"match": "contains", "key": "Which facets", "response": "A"}])"));
  const CompareResult r = compare(dir.path() / "a", dir.path() / "b", judge, PromptLibrary::builtin());
  EXPECT_EQ(r.report.win_ratio_a, 100.0);
  EXPECT_EQ(r.queries.size(), 10u);
}

TEST(Compare, QuerySetMismatchListsDifference) {
  ScratchDir dir("compare-mismatch");
  write_predictions({{"x", {"1"}}, {"y", {"2"}}}, (dir.path() / "a.jsonl").string());
  write_predictions({{"x", {"1"}}, {"z", {"2"}}}, (dir.path() / "b.jsonl").string());
  MockBackend judge({});
  try {
    compare(dir.path() / "a.jsonl", dir.path() / "b.jsonl", judge, PromptLibrary::builtin());
    FAIL();
  } catch (const DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("y (only in A)"), std::string::npos);
    EXPECT_NE(what.find("z (only in B)"), std::string::npos);
  }
}

TEST(Demonstrations, SeededAndSkipInputQuery) {
  const ExperimentConfig c = load_config(fixture("toy_edit.toml").string());
  const Corpus corpus = load_experiment_corpus(c);
  const auto a = demonstration_candidates(corpus, 13);
  const auto b = demonstration_candidates(corpus, 13);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a, b);
  std::vector<Demonstration> cands;
  for (const auto* r : a) cands.push_back({r->query, r->facets, r->facets});
  const auto picked = pick_demonstrations(cands, a[0]->query);
  EXPECT_EQ(picked[0].query, a[1]->query);
  EXPECT_EQ(picked[1].query, a[2]->query);
}
