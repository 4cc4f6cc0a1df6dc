#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace facetpipe {

// Where a facet list came from.
enum class FacetStage { kSmall, kEdited, kZeroShot, kFewShot, kGold };

std::string_view to_string(FacetStage stage) noexcept;

struct FacetSet {
  std::vector<std::string> facets;
  FacetStage stage = FacetStage::kSmall;

  bool operator==(const FacetSet&) const = default;
};

// One line of a predictions / gold JSONL file: {"query": .., "facets": [..]}.
struct QueryFacets {
  std::string query;
  std::vector<std::string> facets;

  bool operator==(const QueryFacets&) const = default;
};

std::string predictions_to_jsonl(const std::vector<QueryFacets>& rows);
std::vector<QueryFacets> predictions_from_jsonl(std::string_view text, const std::string& source_name);
std::vector<QueryFacets> read_predictions(const std::string& path);
void write_predictions(const std::vector<QueryFacets>& rows, const std::string& path);

}  // namespace facetpipe
