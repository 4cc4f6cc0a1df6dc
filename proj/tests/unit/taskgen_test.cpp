#include <gtest/gtest.h>

#include <cmath>

#include "facetpipe/error.hpp"
#include "facetpipe/taskgen.hpp"
#include "facetpipe/text.hpp"

using namespace facetpipe;

TEST(BuildInput, QueryModePrefixesSpecialToken) {
  EXPECT_EQ(build_input(TaskKind::kFacet, "warcraft", InputMode::kQ, {}, Split::kTest), "[facet] warcraft");
  EXPECT_EQ(build_input(TaskKind::kDocument, "orange", InputMode::kQ, {}, Split::kTest), "[document] orange");
  EXPECT_EQ(build_input(TaskKind::kRelated, "orange", InputMode::kQ, {}, Split::kTest), "[related] orange");
}

TEST(BuildInput, QdModeConcatenatesSnippets) {
  InputOptions opts;
  opts.max_snippets = 2;
  EXPECT_EQ(build_input(TaskKind::kFacet, "orange", InputMode::kQD, {"s1", "s2", "s3"}, Split::kTrain, opts),
            "[facet] orange </s> s1 </s> s2");
}

TEST(BuildInput, QdModeRejectsTestProvenance) {
  EXPECT_THROW(build_input(TaskKind::kFacet, "orange", InputMode::kQD, {"s1"}, Split::kTest), ContractViolation);
}

TEST(BuildInput, EmptyQueryRejected) {
  EXPECT_THROW(build_input(TaskKind::kFacet, "  ", InputMode::kQ, {}, Split::kTrain), DataError);
}

TEST(Target, JoinsWithCommaSpace) {
  EXPECT_EQ(build_target({"warcraft game", "warcraft movie"}), "warcraft game, warcraft movie");
  EXPECT_EQ(build_target({"only one"}), "only one");
  EXPECT_EQ(build_target({"a", "b", "c"}), "a, b, c");
}

TEST(Target, EmptyListRejected) {
  try {
    build_target({});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "no target items");
  }
}

TEST(Target, ParseSplitsTrimsAndToleratesTrailingComma) {
  EXPECT_EQ(parse_target("warcraft game, warcraft movie"), (std::vector<std::string>{"warcraft game", "warcraft movie"}));
  EXPECT_EQ(parse_target("carrots nutrition, carrots recipes,"),
            (std::vector<std::string>{"carrots nutrition", "carrots recipes"}));
  EXPECT_EQ(parse_target(" a ,  b "), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(parse_target("a,b"), (std::vector<std::string>{"a,b"}));
  EXPECT_TRUE(parse_target("").empty());
  EXPECT_EQ(parse_target("x, x"), (std::vector<std::string>{"x", "x"}));
}

TEST(Taskset, OrderingAndSkipRules) {
  Corpus one;
  one.records.push_back({"orange", {"orange fruit"}, {"s1"}, {}, Split::kTrain});
  const auto ex = build_taskset(one, {TaskKind::kDocument, TaskKind::kFacet}, InputMode::kQ);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].task, TaskKind::kFacet);
  EXPECT_EQ(ex[1].target_text, "s1");
  EXPECT_THROW(build_taskset(one, {TaskKind::kRelated}, InputMode::kQ), DataError);
}

TEST(Taskset, SizeMatchesBruteCount) {
  Corpus c;
  for (int i = 0; i < 10; ++i) {
    QueryRecord r{"q" + std::to_string(i), {"f" + std::to_string(i)}, {}, {}, Split::kTrain};
    if (i % 5 < 3) r.snippets = {"snippet " + std::to_string(i)};
    if (i % 2 == 0) r.related_queries = {"rel " + std::to_string(i)};
    c.records.push_back(r);
  }
  std::size_t brute = 0;
  for (const auto& r : c.records) brute += 1 + (r.snippets.empty() ? 0 : 1);
  EXPECT_EQ(brute, 16u);
  EXPECT_EQ(build_taskset(c, {TaskKind::kFacet, TaskKind::kDocument}, InputMode::kQ).size(), brute);
  std::size_t all = 0;
  for (const auto& r : c.records) all += 1 + !r.snippets.empty() + !r.related_queries.empty();
  EXPECT_EQ(build_taskset(c, {TaskKind::kFacet, TaskKind::kDocument, TaskKind::kRelated}, InputMode::kQD).size(), all);
}

TEST(Taskset, JsonlFields) {
  Corpus c;
  c.records.push_back({"orange", {"orange fruit", "orange tree"}, {}, {}, Split::kTrain});
  const std::string line = taskset_to_jsonl(build_taskset(c, {TaskKind::kFacet}, InputMode::kQ));
  EXPECT_EQ(line,
            "{\"task\":\"facet\",\"input\":\"[facet] orange\",\"target\":\"orange fruit, orange tree\","
            "\"query\":\"orange\"}\n");
}

TEST(Loss, PerfectPredictionIsZero) {
  LossInput in{{0, 2}, {{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}}};
  const auto r = cross_entropy(in);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_FALSE(r.clamped);
}

TEST(Loss, UniformOverFourIsLnFour) {
  LossInput in{{1, 3}, {{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}}};
  double brute = 0.0;
  for (int i = 0; i < 2; ++i) brute += -std::log(0.25);
  EXPECT_NEAR(cross_entropy(in).value, brute / 2.0, 1e-12);
  EXPECT_NEAR(cross_entropy(in).value, 1.386294361119891, 1e-9);
}

TEST(Loss, ZeroProbabilityIsClampedAndFlagged) {
  LossInput in{{0}, {{0.0, 1.0}}};
  const auto r = cross_entropy(in);
  EXPECT_TRUE(r.clamped);
  EXPECT_NEAR(r.value, -std::log(kLossEpsilon), 1e-9);
}

TEST(Loss, ContractViolations) {
  EXPECT_THROW(cross_entropy({{0, 1}, {{1.0}}}), DataError);
  EXPECT_THROW(cross_entropy({{0}, {{0.7, 0.7}}}), DataError);
  EXPECT_THROW(cross_entropy({{5}, {{0.5, 0.5}}}), DataError);
}

TEST(Loss, MultiTaskIsSumOfMeans) {
  EXPECT_EQ(multi_task_loss(std::map<TaskKind, double>{{TaskKind::kFacet, 0.5}, {TaskKind::kDocument, 0.25}}), 0.75);
}
