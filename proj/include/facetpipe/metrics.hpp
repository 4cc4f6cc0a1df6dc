#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "facetpipe/facet_set.hpp"

namespace facetpipe {

struct NormalizedFacet {
  std::string original;
  std::vector<std::string> tokens;

  // Tokens joined by single spaces; the identity used by exact match.
  std::string joined() const;
};

// Lowercase, split on whitespace, strip non-alphanumeric characters from both
// ends of each token, drop tokens that become empty.
NormalizedFacet normalize(std::string_view facet);

double term_overlap_f1(std::span<const std::string> pred, std::span<const std::string> gold);
double exact_match_f1(std::span<const std::string> pred, std::span<const std::string> gold);

inline constexpr double kBleuEpsilon = 1e-9;

// Sentence-level BLEU of one candidate against all references, averaged over
// n = 1..min(4, |candidate|).
double facet_bleu(const std::vector<std::string>& candidate, const std::vector<std::vector<std::string>>& references);
double set_bleu_mean(std::span<const std::string> pred, std::span<const std::string> gold);

// Pairwise facet similarity in [0, 1]; sim(x, x) == 1 and symmetric.
class SimilarityBackend {
 public:
  virtual ~SimilarityBackend() = default;

  // matrix[i][j] = sim(rows[i], cols[j]).
  virtual std::vector<std::vector<double>> similarity(std::span<const std::string> rows,
                                                      std::span<const std::string> cols) const = 0;
  virtual std::string id() const = 0;
};

// Cosine over character-trigram counts of the normalized facet padded with
// "##" on both ends.
class CharTrigramCosine final : public SimilarityBackend {
 public:
  std::vector<std::vector<double>> similarity(std::span<const std::string> rows,
                                              std::span<const std::string> cols) const override;
  std::string id() const override { return "char_trigram_cosine"; }

  static double pair(std::string_view a, std::string_view b);
};

// POST {"texts": [...]} -> {"vectors": [[...], ...]}; cosine clamped to [0, 1].
class EmbeddingServiceSimilarity final : public SimilarityBackend {
 public:
  explicit EmbeddingServiceSimilarity(std::string endpoint_url, int timeout_ms = 30000);

  std::vector<std::vector<double>> similarity(std::span<const std::string> rows,
                                              std::span<const std::string> cols) const override;
  std::string id() const override { return "embedding_service@" + endpoint_; }

 private:
  std::string endpoint_;
  int timeout_ms_;
};

std::unique_ptr<SimilarityBackend> make_similarity(std::string_view kind, const std::string& endpoint = "");

double set_bertscore_f1(std::span<const std::string> pred, std::span<const std::string> gold,
                        const SimilarityBackend& backend);

struct FacetSetStats {
  double avg_set_size = 0.0;
  double avg_facet_length_chars = 0.0;
  double query_inclusion_pct = 0.0;
  double duplicate_proportion = 0.0;
};

FacetSetStats facet_set_stats(const std::vector<std::vector<std::string>>& sets,
                              const std::vector<std::string>& queries);

struct MetricScores {
  double term_overlap_f1 = 0.0;
  double exact_match_f1 = 0.0;
  double set_bleu_mean = 0.0;
  double set_bertscore_f1 = 0.0;
};

struct MetricReport {
  MetricScores scores;
  FacetSetStats stats;
  std::size_t query_count = 0;
};

MetricScores score_pair(std::span<const std::string> pred, std::span<const std::string> gold,
                        const SimilarityBackend& backend);

// Macro average over gold queries. Every gold query must have a prediction.
MetricReport score_predictions(const std::vector<QueryFacets>& pred, const std::vector<QueryFacets>& gold,
                               const SimilarityBackend& backend);
MetricReport score_run(const std::string& pred_file, const std::string& gold_file, const SimilarityBackend& backend);

double round_to(double value, int decimals);

// Fixed key order, 4-decimal rounding.
std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(std::string_view text);

struct ReportRow {
  std::string label;
  MetricReport report;
};

// Aligned text table: the four metrics (4 decimals) then the four set
// statistics (2 decimals).
std::string format_report_table(const std::vector<ReportRow>& rows);

}  // namespace facetpipe
