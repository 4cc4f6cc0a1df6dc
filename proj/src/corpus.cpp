#include "facetpipe/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_set>

#include "facetpipe/error.hpp"
#include "facetpipe/text.hpp"

namespace facetpipe {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kOptionColumns = 5;

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

struct PathSegment {
  std::string key;
  bool iterate = false;
};

std::vector<PathSegment> parse_path(const std::string& path) {
  std::vector<PathSegment> segments;
  for (const std::string& part : split_exact(path, ".")) {
    if (part.empty()) throw ConfigError("empty segment in SERP path '" + path + "'");
    PathSegment seg;
    if (ends_with(part, "[*]")) {
      seg.key = part.substr(0, part.size() - 3);
      seg.iterate = true;
    } else {
      seg.key = part;
    }
    segments.push_back(std::move(seg));
  }
  return segments;
}

void collect_strings(const json& node, const std::vector<PathSegment>& path, std::size_t depth,
                     std::vector<std::string>& out) {
  if (depth == path.size()) {
    if (node.is_string()) out.push_back(node.get<std::string>());
    return;
  }
  const PathSegment& seg = path[depth];
  const json* next = &node;
  if (!seg.key.empty()) {
    if (!node.is_object()) return;
    auto it = node.find(seg.key);
    if (it == node.end()) return;
    next = &*it;
  }
  if (seg.iterate) {
    if (!next->is_array()) return;
    for (const json& item : *next) collect_strings(item, path, depth + 1, out);
  } else {
    collect_strings(*next, path, depth + 1, out);
  }
}

std::vector<std::string> non_empty_trimmed(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const std::string& s : items) {
    std::string_view t = trim(s);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::vector<std::string> read_string_array(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (!it->is_array()) throw ParseError(where + ": field '" + key + "' is not an array");
  std::vector<std::string> out;
  for (const json& v : *it) {
    if (!v.is_string()) throw ParseError(where + ": field '" + key + "' holds a non-string");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

std::string_view to_string(Split split) noexcept { return split == Split::kTrain ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(text) + "' (expected train or test)");
}

std::vector<const QueryRecord*> Corpus::in_split(Split split) const {
  std::vector<const QueryRecord*> out;
  for (const QueryRecord& r : records) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

Corpus parse_mimics_tsv_text(std::string_view text, Split split, const std::string& source_name) {
  const std::vector<std::string_view> lines = split_lines(text);
  if (lines.empty() || trim(lines[0]).empty()) throw ParseError(source_name, 1, "missing header row");

  const std::vector<std::string_view> header = split_tabs(lines[0]);
  auto column = [&](std::string_view name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    throw ParseError(source_name, 1, "header lacks column '" + std::string(name) + "'");
  };
  const std::size_t query_col = column("query");
  std::vector<std::size_t> option_cols;
  for (int i = 1; i <= kOptionColumns; ++i) option_cols.push_back(column("option_" + std::to_string(i)));

  Corpus corpus;
  std::unordered_set<std::string> seen;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (trim(line).empty()) continue;
    const std::vector<std::string_view> cells = split_tabs(line);
    if (cells.size() != header.size()) {
      throw ParseError(source_name, ln + 1,
                       "expected " + std::to_string(header.size()) + " columns, found " +
                           std::to_string(cells.size()));
    }
    QueryRecord rec;
    rec.query = std::string(trim(cells[query_col]));
    rec.split = split;
    if (rec.query.empty()) throw ParseError(source_name, ln + 1, "empty query");
    for (std::size_t col : option_cols) {
      std::string_view facet = trim(cells[col]);
      if (!facet.empty()) rec.facets.emplace_back(facet);
    }
    if (rec.facets.empty()) {
      ++corpus.manifest.dropped_empty;
      continue;
    }
    if (!seen.insert(normalize_query(rec.query)).second) {
      ++corpus.manifest.dropped_duplicate;
      continue;
    }
    corpus.records.push_back(std::move(rec));
  }
  corpus.manifest.sources.push_back({source_name, sha256_hex(text), corpus.records.size()});
  if (corpus.manifest.dropped_empty > 0) {
    spdlog::info("{}: dropped {} rows without facet options", source_name, corpus.manifest.dropped_empty);
  }
  return corpus;
}

Corpus parse_mimics_tsv(const std::string& path, Split split) {
  return parse_mimics_tsv_text(read_file(path), split, path);
}

Corpus attach_serp_text(const Corpus& corpus, std::string_view serp_json, const SerpOptions& options) {
  std::map<std::string, int> key_counts;
  json::parser_callback_t track_keys = [&](int depth, json::parse_event_t event, json& parsed) {
    if (depth == 1 && event == json::parse_event_t::key) ++key_counts[normalize_query(parsed.get<std::string>())];
    return true;
  };
  json root;
  try {
    root = json::parse(serp_json, track_keys);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed SERP JSON: ") + e.what());
  }
  if (!root.is_object()) throw ParseError("SERP JSON must be an object keyed by query");

  std::vector<std::string> duplicates;
  for (const auto& [key, count] : key_counts) {
    if (count > 1) duplicates.push_back(key);
  }
  if (!duplicates.empty()) throw DataError("duplicate query keys in SERP file: " + join(duplicates, ", "));

  std::map<std::string, const json*> by_query;
  for (auto it = root.begin(); it != root.end(); ++it) by_query[normalize_query(it.key())] = &it.value();

  const auto snippet_path = parse_path(options.snippet_path);
  const auto related_path = parse_path(options.related_path);

  Corpus out = corpus;
  for (QueryRecord& rec : out.records) {
    auto it = by_query.find(normalize_query(rec.query));
    if (it == by_query.end()) continue;
    std::vector<std::string> snippets;
    collect_strings(*it->second, snippet_path, 0, snippets);
    snippets = non_empty_trimmed(snippets);
    if (snippets.size() > options.max_snippets) snippets.resize(options.max_snippets);
    rec.snippets = std::move(snippets);

    std::vector<std::string> related;
    collect_strings(*it->second, related_path, 0, related);
    rec.related_queries = non_empty_trimmed(related);
  }
  return out;
}

Corpus attach_serp(const Corpus& corpus, const std::string& serp_path, const SerpOptions& options) {
  Corpus out = attach_serp_text(corpus, read_file(serp_path), options);
  out.manifest.sources.push_back({serp_path, sha256_file(serp_path), 0});
  return out;
}

CorpusSummary corpus_summary(const Corpus& corpus) {
  if (corpus.records.empty()) throw DataError("empty corpus");
  CorpusSummary s;
  s.record_count = corpus.records.size();
  std::size_t facets = 0;
  std::size_t with_snippets = 0;
  std::size_t with_related = 0;
  for (const QueryRecord& r : corpus.records) {
    facets += r.facets.size();
    with_snippets += r.snippets.empty() ? 0 : 1;
    with_related += r.related_queries.empty() ? 0 : 1;
  }
  const double n = static_cast<double>(s.record_count);
  s.mean_facets = static_cast<double>(facets) / n;
  s.snippet_fraction = static_cast<double>(with_snippets) / n;
  s.related_fraction = static_cast<double>(with_related) / n;
  return s;
}

Corpus merge_corpora(const std::vector<Corpus>& parts) {
  Corpus out;
  std::set<std::pair<Split, std::string>> seen;
  for (const Corpus& part : parts) {
    for (const QueryRecord& r : part.records) {
      if (!seen.emplace(r.split, normalize_query(r.query)).second) {
        ++out.manifest.dropped_duplicate;
        continue;
      }
      out.records.push_back(r);
    }
    out.manifest.sources.insert(out.manifest.sources.end(), part.manifest.sources.begin(),
                                part.manifest.sources.end());
    out.manifest.dropped_empty += part.manifest.dropped_empty;
    out.manifest.dropped_duplicate += part.manifest.dropped_duplicate;
  }
  return out;
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const QueryRecord& r : corpus.records) {
    ordered_json j;
    j["query"] = r.query;
    j["facets"] = r.facets;
    j["snippets"] = r.snippets;
    j["related_queries"] = r.related_queries;
    j["split"] = to_string(r.split);
    out += j.dump();
    out += '\n';
  }
  return out;
}

Corpus corpus_from_jsonl(std::string_view text, const std::string& source_name) {
  Corpus corpus;
  std::set<std::pair<Split, std::string>> seen;
  std::size_t ln = 0;
  for (std::string_view line : split_lines(text)) {
    ++ln;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(source_name, ln, e.what());
    }
    const std::string where = source_name + ":" + std::to_string(ln);
    if (!j.is_object() || !j.contains("query") || !j["query"].is_string()) {
      throw ParseError(source_name, ln, "record lacks a string 'query'");
    }
    QueryRecord rec;
    rec.query = j["query"].get<std::string>();
    if (trim(rec.query).empty()) throw ParseError(source_name, ln, "empty query");
    rec.facets = read_string_array(j, "facets", where);
    rec.snippets = read_string_array(j, "snippets", where);
    rec.related_queries = read_string_array(j, "related_queries", where);
    for (const std::string& f : rec.facets) {
      if (trim(f).empty()) throw ParseError(source_name, ln, "empty facet string");
    }
    rec.split = j.contains("split") ? parse_split(j["split"].get<std::string>()) : Split::kTrain;
    if (!seen.emplace(rec.split, normalize_query(rec.query)).second) {
      ++corpus.manifest.dropped_duplicate;
      continue;
    }
    corpus.records.push_back(std::move(rec));
  }
  corpus.manifest.sources.push_back({source_name, sha256_hex(text), corpus.records.size()});
  return corpus;
}

void write_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  write_file(path, corpus_to_jsonl(corpus));
}

Corpus read_corpus_jsonl(const std::string& path) { return corpus_from_jsonl(read_file(path), path); }

std::string manifest_to_json(const CorpusManifest& manifest) {
  ordered_json j;
  j["sources"] = ordered_json::array();
  for (const SourceEntry& s : manifest.sources) {
    j["sources"].push_back({{"name", s.name}, {"sha256", s.sha256}, {"record_count", s.record_count}});
  }
  j["dropped_empty"] = manifest.dropped_empty;
  j["dropped_duplicate"] = manifest.dropped_duplicate;
  return j.dump(2) + "\n";
}

Corpus load_corpus(const std::string& path, Split split_for_tsv) {
  if (ends_with(path, ".jsonl")) return read_corpus_jsonl(path);
  return parse_mimics_tsv(path, split_for_tsv);
}

}  // namespace facetpipe
