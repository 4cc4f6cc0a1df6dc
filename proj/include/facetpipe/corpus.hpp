#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace facetpipe {

enum class Split { kTrain, kTest };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view text);

// One query with its facet labels and (train-time only) evidence.
struct QueryRecord {
  std::string query;
  std::vector<std::string> facets;
  std::vector<std::string> snippets;
  std::vector<std::string> related_queries;
  Split split = Split::kTrain;

  bool operator==(const QueryRecord&) const = default;
};

struct SourceEntry {
  std::string name;
  std::string sha256;
  std::size_t record_count = 0;

  bool operator==(const SourceEntry&) const = default;
};

struct CorpusManifest {
  std::vector<SourceEntry> sources;
  std::size_t dropped_empty = 0;      // rows without any facet option
  std::size_t dropped_duplicate = 0;  // rows whose normalized query was already seen

  bool operator==(const CorpusManifest&) const = default;
};

struct Corpus {
  std::vector<QueryRecord> records;
  CorpusManifest manifest;

  std::vector<const QueryRecord*> in_split(Split split) const;

  bool operator==(const Corpus&) const = default;
};

struct SerpOptions {
  std::size_t max_snippets = 5;
  // Dotted path into each per-query object; "name[*]" iterates an array.
  std::string snippet_path = "webPages.value[*].snippet";
  std::string related_path = "relatedSearches.value[*].text";
};

struct CorpusSummary {
  std::size_t record_count = 0;
  double mean_facets = 0.0;
  double snippet_fraction = 0.0;
  double related_fraction = 0.0;
};

// MIMICS-style TSV: header row naming `query` and `option_1`..`option_5`;
// other columns are ignored. Facets are the non-empty options in column order.
Corpus parse_mimics_tsv(const std::string& path, Split split);
Corpus parse_mimics_tsv_text(std::string_view text, Split split, const std::string& source_name);

Corpus attach_serp(const Corpus& corpus, const std::string& serp_path, const SerpOptions& options = {});
Corpus attach_serp_text(const Corpus& corpus, std::string_view serp_json, const SerpOptions& options = {});

CorpusSummary corpus_summary(const Corpus& corpus);

// Concatenate corpora, enforcing per-split query uniqueness across the union.
Corpus merge_corpora(const std::vector<Corpus>& parts);

// JSONL persistence: one QueryRecord per line.
std::string corpus_to_jsonl(const Corpus& corpus);
Corpus corpus_from_jsonl(std::string_view text, const std::string& source_name = "<jsonl>");
void write_corpus_jsonl(const Corpus& corpus, const std::string& path);
Corpus read_corpus_jsonl(const std::string& path);

std::string manifest_to_json(const CorpusManifest& manifest);

// Loads .tsv (MIMICS) or .jsonl (internal form) by extension.
Corpus load_corpus(const std::string& path, Split split_for_tsv);

}  // namespace facetpipe
