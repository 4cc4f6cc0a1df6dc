#include "facetpipe/facet_set.hpp"

#include <nlohmann/json.hpp>

#include "facetpipe/error.hpp"
#include "facetpipe/text.hpp"

namespace facetpipe {

std::string_view to_string(FacetStage stage) noexcept {
  switch (stage) {
    case FacetStage::kSmall:
      return "small";
    case FacetStage::kEdited:
      return "edited";
    case FacetStage::kZeroShot:
      return "zero_shot";
    case FacetStage::kFewShot:
      return "few_shot";
    case FacetStage::kGold:
      return "gold";
  }
  return "";
}

std::string predictions_to_jsonl(const std::vector<QueryFacets>& rows) {
  std::string out;
  for (const QueryFacets& row : rows) {
    nlohmann::ordered_json j;
    j["query"] = row.query;
    j["facets"] = row.facets;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<QueryFacets> predictions_from_jsonl(std::string_view text, const std::string& source_name) {
  std::vector<QueryFacets> rows;
  std::size_t ln = 0;
  for (const std::string& line : split_exact(text, "\n")) {
    ++ln;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(source_name, ln, e.what());
    }
    if (!j.is_object() || !j.contains("query") || !j["query"].is_string() || !j.contains("facets") ||
        !j["facets"].is_array()) {
      throw ParseError(source_name, ln, "expected {\"query\": string, \"facets\": [string, ...]}");
    }
    QueryFacets row;
    row.query = j["query"].get<std::string>();
    for (const auto& f : j["facets"]) {
      if (!f.is_string()) throw ParseError(source_name, ln, "non-string facet");
      row.facets.push_back(f.get<std::string>());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<QueryFacets> read_predictions(const std::string& path) {
  return predictions_from_jsonl(read_file(path), path);
}

void write_predictions(const std::vector<QueryFacets>& rows, const std::string& path) {
  write_file(path, predictions_to_jsonl(rows));
}

}  // namespace facetpipe
