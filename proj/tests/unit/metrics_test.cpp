#include <gtest/gtest.h>

#include <cmath>

#include "facetpipe/error.hpp"
#include "facetpipe/metrics.hpp"
#include "support/oracles.hpp"

using namespace facetpipe;
using V = std::vector<std::string>;

namespace {

V split_cells(const std::string& row) {
  V out;
  std::size_t start = 0;
  while (true) {
    const std::size_t bar = row.find('|', start);
    std::string cell = row.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
    cell.erase(0, cell.find_first_not_of(' '));
    cell.erase(cell.find_last_not_of(' ') + 1);
    out.push_back(cell);
    if (bar == std::string::npos) return out;
    start = bar + 1;
  }
}

}  // namespace

TEST(Normalize, Rules) {
  EXPECT_EQ(normalize("Warcraft Movie!").tokens, (V{"warcraft", "movie"}));
  EXPECT_EQ(normalize("  grow   carrots ").tokens, (V{"grow", "carrots"}));
  EXPECT_EQ(normalize("fire-wall's setup").tokens, (V{"fire-wall's", "setup"}));
  EXPECT_EQ(normalize("-- !! --").tokens, V{});
  EXPECT_EQ(normalize("A  B").joined(), "a b");
}

TEST(TermOverlap, WorkedExample) {
  const V pred{"warcraft movie"}, gold{"warcraft game", "warcraft movie"};
  EXPECT_NEAR(term_overlap_f1(pred, gold), 0.8, 1e-12);
  EXPECT_NEAR(term_overlap_f1(pred, gold), oracle::term_overlap(pred, gold), 1e-12);
}

TEST(TermOverlap, IdentityDisjointAndEmpty) {
  const V g{"grow carrots", "cook carrots"};
  EXPECT_EQ(term_overlap_f1(g, g), 1.0);
  EXPECT_EQ(term_overlap_f1(V{"xyz"}, g), 0.0);
  EXPECT_EQ(term_overlap_f1(V{}, g), 0.0);
  EXPECT_THROW(term_overlap_f1(g, V{}), DataError);
}

TEST(ExactMatch, WorkedExample) {
  EXPECT_DOUBLE_EQ(exact_match_f1(V{"a b", "c"}, V{"c", "d"}), 0.5);
  EXPECT_EQ(exact_match_f1(V{"Orange Fruit!"}, V{"orange fruit"}), 1.0);
  EXPECT_EQ(exact_match_f1(V{"x"}, V{"y"}), 0.0);
  EXPECT_THROW(exact_match_f1(V{"x"}, V{}), DataError);
}

TEST(Bleu, ShortCandidateBrevityPenalty) {
  EXPECT_NEAR(set_bleu_mean(V{"warcraft"}, V{"warcraft game"}), std::exp(-1.0), 1e-12);
}

TEST(Bleu, IdentitySmoothingAndEmpty) {
  EXPECT_EQ(set_bleu_mean(V{"grow carrots at home"}, V{"grow carrots at home"}), 1.0);
  EXPECT_LE(set_bleu_mean(V{"aaa bbb"}, V{"ccc ddd"}), 1e-6);
  EXPECT_EQ(set_bleu_mean(V{}, V{"x"}), 0.0);
  EXPECT_THROW(set_bleu_mean(V{"x"}, V{}), DataError);
}

TEST(Bleu, MatchesBruteForceCounter) {
  const V pred{"the the the cat", "cat on the mat", "a b c d e"}, gold{"the cat", "the cat on the mat", "b c d"};
  EXPECT_NEAR(set_bleu_mean(pred, gold), oracle::set_bleu(pred, gold), 1e-9);
}

TEST(Trigram, IdentitySymmetryAndDisjoint) {
  EXPECT_EQ(CharTrigramCosine::pair("orange fruit", "orange fruit"), 1.0);
  EXPECT_EQ(CharTrigramCosine::pair("orange fruit", "orange tree"), CharTrigramCosine::pair("orange tree", "orange fruit"));
  EXPECT_EQ(CharTrigramCosine::pair("xxx", "yyy"), 0.0);
  EXPECT_NEAR(CharTrigramCosine::pair("orange fruit", "orange tree"), oracle::trigram_cosine("orange fruit", "orange tree"),
              1e-12);
}

TEST(BertScore, WorkedExample) {
  CharTrigramCosine sim;
  const double s = oracle::trigram_cosine("orange fruit", "orange tree");
  const double p = 1.0, r = (1.0 + s) / 2.0;
  EXPECT_NEAR(set_bertscore_f1(V{"orange fruit"}, V{"orange fruit", "orange tree"}, sim), 2 * p * r / (p + r), 1e-12);
  EXPECT_EQ(set_bertscore_f1(V{"xxx"}, V{"yyy"}, sim), 0.0);
  EXPECT_EQ(set_bertscore_f1(V{}, V{"yyy"}, sim), 0.0);
}

TEST(BertScore, ExactCopyNeverLowersPrecision) {
  CharTrigramCosine sim;
  const V gold{"orange fruit", "orange tree", "orange juice"};
  V pred{"apple", "orange flower"};
  const double before = set_bertscore_f1(pred, gold, sim);
  pred[0] = gold[2];
  EXPECT_GE(set_bertscore_f1(pred, gold, sim), before);
}

TEST(Stats, WorkedExamples) {
  auto s = facet_set_stats({{"a b", "a b", "c d", "e f"}}, {"zzz"});
  EXPECT_EQ(s.duplicate_proportion, 0.25);
  EXPECT_EQ(s.avg_set_size, 4.0);
  s = facet_set_stats({{"grow carrots", "cook carrots", "store food"}}, {"carrots"});
  EXPECT_NEAR(s.query_inclusion_pct, 66.67, 0.005);
  s = facet_set_stats({{"grow carrots", "cook carrots"}, {"orange the fruit"}}, {"carrots", "orange"});
  EXPECT_EQ(s.duplicate_proportion, 0.0);
  EXPECT_DOUBLE_EQ(s.avg_facet_length_chars, (12 + 12 + 16) / 3.0);
  EXPECT_THROW(facet_set_stats({{"x"}}, {"a", "b"}), DataError);
}

TEST(ScorePredictions, MacroAverageAndMissing) {
  CharTrigramCosine sim;
  const std::vector<QueryFacets> gold{{"warcraft", {"warcraft game", "warcraft movie"}}, {"c", {"c", "d"}}};
  const std::vector<QueryFacets> pred{{"warcraft", {"warcraft movie"}}, {"c", {"a b", "c"}}};
  const MetricReport r = score_predictions(pred, gold, sim);
  EXPECT_NEAR(r.scores.term_overlap_f1,
              (oracle::term_overlap(pred[0].facets, gold[0].facets) + oracle::term_overlap(pred[1].facets, gold[1].facets)) / 2,
              1e-12);
  EXPECT_NEAR(r.scores.exact_match_f1, (oracle::exact_match(pred[0].facets, gold[0].facets) + 0.5) / 2, 1e-12);
  EXPECT_EQ(r.query_count, 2u);
  try {
    score_predictions({pred[0]}, gold, sim);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("c"), std::string::npos);
  }
}

TEST(ScorePredictions, PerfectRun) {
  CharTrigramCosine sim;
  const std::vector<QueryFacets> gold{{"a", {"x y", "z"}}, {"b", {"w"}}};
  const MetricReport r = score_predictions(gold, gold, sim);
  EXPECT_EQ(r.scores.term_overlap_f1, 1.0);
  EXPECT_EQ(r.scores.exact_match_f1, 1.0);
  EXPECT_EQ(r.scores.set_bleu_mean, 1.0);
  EXPECT_EQ(r.scores.set_bertscore_f1, 1.0);
}

TEST(Report, JsonRoundTripAndTable) {
  MetricReport r;
  r.scores = {0.25079, 0.03381, 0.29921, 0.871};
  r.stats = {2.39, 17.9, 61.87, 0.038};
  r.query_count = 3;
  const MetricReport back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.scores.term_overlap_f1, 0.2508);
  const std::string table = format_report_table({{"FD+M", r}, {"second", r}});
  EXPECT_LT(table.find("FD+M"), table.find("second"));
  const std::string row = table.substr(table.find("FD+M"), table.find('\n', table.find("FD+M")) - table.find("FD+M"));
  V cells;
  for (const std::string& c : split_cells(row)) cells.push_back(c);
  EXPECT_EQ(cells, (V{"FD+M", "0.2508", "0.0338", "0.2992", "0.8710", "2.39", "17.90", "61.87", "0.04"}));
}
