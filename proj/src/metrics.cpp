#include "facetpipe/metrics.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "facetpipe/error.hpp"
#include "facetpipe/text.hpp"

namespace facetpipe {

namespace {

// Order-independent mean: sorting first makes the floating-point sum a
// function of the multiset of values only.
double stable_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

double harmonic(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

void require_gold(std::span<const std::string> gold, const char* metric) {
  if (gold.empty()) throw DataError(std::string(metric) + ": empty gold facet set");
}

std::vector<std::vector<std::string>> tokenize_all(std::span<const std::string> facets) {
  std::vector<std::vector<std::string>> out;
  out.reserve(facets.size());
  for (const std::string& f : facets) out.push_back(normalize(f).tokens);
  return out;
}

std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::unordered_map<std::string, int> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

std::unordered_map<std::string, long long> trigram_counts(std::string_view facet) {
  const std::string padded = "##" + normalize(facet).joined() + "##";
  std::unordered_map<std::string, long long> counts;
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) ++counts[padded.substr(i, 3)];
  return counts;
}

double cosine_counts(const std::unordered_map<std::string, long long>& a,
                     const std::unordered_map<std::string, long long>& b) {
  long long dot = 0;
  long long na = 0;
  long long nb = 0;
  for (const auto& [g, c] : a) {
    na += c * c;
    auto it = b.find(g);
    if (it != b.end()) dot += c * it->second;
  }
  for (const auto& [g, c] : b) nb += c * c;
  if (na == 0 || nb == 0) return 0.0;
  const double cos = static_cast<double>(dot) / std::sqrt(static_cast<double>(na) * static_cast<double>(nb));
  return std::clamp(cos, 0.0, 1.0);
}

}  // namespace

std::string NormalizedFacet::joined() const { return join(tokens, " "); }

NormalizedFacet normalize(std::string_view facet) {
  NormalizedFacet out;
  out.original = std::string(facet);
  const std::string lower = to_lower(facet);
  std::string_view rest(lower);
  while (!rest.empty()) {
    std::size_t b = 0;
    while (b < rest.size() && is_space(rest[b])) ++b;
    std::size_t e = b;
    while (e < rest.size() && !is_space(rest[e])) ++e;
    std::string_view tok = rest.substr(b, e - b);
    rest.remove_prefix(e);
    while (!tok.empty() && !is_alnum(tok.front())) tok.remove_prefix(1);
    while (!tok.empty() && !is_alnum(tok.back())) tok.remove_suffix(1);
    if (!tok.empty()) out.tokens.emplace_back(tok);
  }
  return out;
}

double term_overlap_f1(std::span<const std::string> pred, std::span<const std::string> gold) {
  require_gold(gold, "term_overlap_f1");
  std::unordered_set<std::string> p;
  std::unordered_set<std::string> g;
  for (const std::string& f : pred) {
    for (auto& t : normalize(f).tokens) p.insert(std::move(t));
  }
  for (const std::string& f : gold) {
    for (auto& t : normalize(f).tokens) g.insert(std::move(t));
  }
  if (p.empty() || g.empty()) return 0.0;
  std::size_t common = 0;
  for (const std::string& t : p) common += g.count(t);
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return harmonic(precision, recall);
}

double exact_match_f1(std::span<const std::string> pred, std::span<const std::string> gold) {
  require_gold(gold, "exact_match_f1");
  std::unordered_set<std::string> p;
  std::unordered_set<std::string> g;
  for (const std::string& f : pred) {
    std::string s = normalize(f).joined();
    if (!s.empty()) p.insert(std::move(s));
  }
  for (const std::string& f : gold) {
    std::string s = normalize(f).joined();
    if (!s.empty()) g.insert(std::move(s));
  }
  if (p.empty() || g.empty()) return 0.0;
  std::size_t k = 0;
  for (const std::string& s : p) k += g.count(s);
  return harmonic(static_cast<double>(k) / static_cast<double>(p.size()),
                  static_cast<double>(k) / static_cast<double>(g.size()));
}

double facet_bleu(const std::vector<std::string>& candidate, const std::vector<std::vector<std::string>>& references) {
  const std::size_t c = candidate.size();
  if (c == 0) return 0.0;

  // Closest reference length; ties go to the shorter reference.
  std::size_t r = 0;
  bool have_ref = false;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    const auto diff = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (!have_ref || diff(ref.size()) < diff(r) || (diff(ref.size()) == diff(r) && ref.size() < r)) {
      r = ref.size();
      have_ref = true;
    }
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)));

  const std::size_t max_n = std::min<std::size_t>(4, c);
  std::vector<double> log_precisions;
  double score_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto cand = ngram_counts(candidate, n);
    std::unordered_map<std::string, int> max_ref;
    for (const auto& ref : references) {
      for (const auto& [g, cnt] : ngram_counts(ref, n)) {
        int& slot = max_ref[g];
        slot = std::max(slot, cnt);
      }
    }
    long long clipped = 0;
    long long total = 0;
    for (const auto& [g, cnt] : cand) {
      total += cnt;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(cnt, it->second);
    }
    double p = static_cast<double>(clipped) / static_cast<double>(total);
    if (p <= 0.0) p = kBleuEpsilon;
    log_precisions.push_back(std::log(p));
    const double mean_log =
        std::accumulate(log_precisions.begin(), log_precisions.end(), 0.0) / static_cast<double>(n);
    score_sum += bp * std::exp(mean_log);
  }
  return score_sum / static_cast<double>(max_n);
}

double set_bleu_mean(std::span<const std::string> pred, std::span<const std::string> gold) {
  require_gold(gold, "set_bleu_mean");
  if (pred.empty()) return 0.0;
  const auto references = tokenize_all(gold);
  std::vector<double> scores;
  scores.reserve(pred.size());
  for (const std::string& f : pred) scores.push_back(facet_bleu(normalize(f).tokens, references));
  return stable_mean(std::move(scores));
}

double CharTrigramCosine::pair(std::string_view a, std::string_view b) {
  return cosine_counts(trigram_counts(a), trigram_counts(b));
}

std::vector<std::vector<double>> CharTrigramCosine::similarity(std::span<const std::string> rows,
                                                               std::span<const std::string> cols) const {
  std::vector<std::unordered_map<std::string, long long>> col_counts;
  col_counts.reserve(cols.size());
  for (const std::string& c : cols) col_counts.push_back(trigram_counts(c));
  std::vector<std::vector<double>> out(rows.size(), std::vector<double>(cols.size(), 0.0));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto rc = trigram_counts(rows[i]);
    for (std::size_t j = 0; j < cols.size(); ++j) out[i][j] = cosine_counts(rc, col_counts[j]);
  }
  return out;
}

EmbeddingServiceSimilarity::EmbeddingServiceSimilarity(std::string endpoint_url, int timeout_ms)
    : endpoint_(std::move(endpoint_url)), timeout_ms_(timeout_ms) {
  if (endpoint_.find("://") == std::string::npos) {
    throw ConfigError("embedding service: endpoint lacks a scheme: " + endpoint_);
  }
}

std::vector<std::vector<double>> EmbeddingServiceSimilarity::similarity(std::span<const std::string> rows,
                                                                        std::span<const std::string> cols) const {
  std::vector<std::string> texts;
  std::map<std::string, std::size_t> index;
  for (auto span : {rows, cols}) {
    for (const std::string& t : span) {
      if (index.emplace(t, texts.size()).second) texts.push_back(t);
    }
  }
  const std::size_t scheme_end = endpoint_.find("://");
  const std::size_t path_start = endpoint_.find('/', scheme_end + 3);
  const std::string host = path_start == std::string::npos ? endpoint_ : endpoint_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/embed" : endpoint_.substr(path_start);

  httplib::Client client(host);
  client.set_connection_timeout(std::chrono::milliseconds(timeout_ms_));
  client.set_read_timeout(std::chrono::milliseconds(timeout_ms_));
  const nlohmann::json body = {{"texts", texts}};
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    throw BackendError(BackendError::Kind::kTransport, "embedding service: " + httplib::to_string(res.error()), 1);
  }
  if (res->status < 200 || res->status >= 300) {
    throw BackendError(res->status >= 500 ? BackendError::Kind::kRetryExhausted : BackendError::Kind::kFatalRequest,
                       "embedding service: HTTP " + std::to_string(res->status), 1);
  }
  std::vector<std::vector<double>> vectors;
  try {
    vectors = nlohmann::json::parse(res->body).at("vectors").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(BackendError::Kind::kProtocol, std::string("embedding service: ") + e.what(), 1);
  }
  if (vectors.size() != texts.size()) {
    throw BackendError(BackendError::Kind::kProtocol, "embedding service: vector count mismatch", 1);
  }

  auto cosine = [&](std::size_t a, std::size_t b) {
    if (a == b) return 1.0;
    const auto& x = vectors[a];
    const auto& y = vectors[b];
    if (x.size() != y.size()) {
      throw BackendError(BackendError::Kind::kProtocol, "embedding service: dimension mismatch", 1);
    }
    double dot = 0.0;
    double nx = 0.0;
    double ny = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      dot += x[k] * y[k];
      nx += x[k] * x[k];
      ny += y[k] * y[k];
    }
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return std::clamp(dot / std::sqrt(nx * ny), 0.0, 1.0);
  };

  std::vector<std::vector<double>> out(rows.size(), std::vector<double>(cols.size(), 0.0));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out[i][j] = cosine(index.at(rows[i]), index.at(cols[j]));
  }
  return out;
}

std::unique_ptr<SimilarityBackend> make_similarity(std::string_view kind, const std::string& endpoint) {
  if (kind == "char_trigram_cosine") return std::make_unique<CharTrigramCosine>();
  if (kind == "embedding_service") return std::make_unique<EmbeddingServiceSimilarity>(endpoint);
  throw ConfigError("unknown similarity backend '" + std::string(kind) + "'");
}

double set_bertscore_f1(std::span<const std::string> pred, std::span<const std::string> gold,
                        const SimilarityBackend& backend) {
  require_gold(gold, "set_bertscore_f1");
  if (pred.empty()) return 0.0;
  const auto sim = backend.similarity(pred, gold);
  std::vector<double> best_for_pred(pred.size(), 0.0);
  std::vector<double> best_for_gold(gold.size(), 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < gold.size(); ++j) {
      best_for_pred[i] = std::max(best_for_pred[i], sim[i][j]);
      best_for_gold[j] = std::max(best_for_gold[j], sim[i][j]);
    }
  }
  return harmonic(stable_mean(std::move(best_for_pred)), stable_mean(std::move(best_for_gold)));
}

FacetSetStats facet_set_stats(const std::vector<std::vector<std::string>>& sets,
                              const std::vector<std::string>& queries) {
  if (sets.size() != queries.size()) {
    throw DataError("facet_set_stats: " + std::to_string(sets.size()) + " sets but " +
                    std::to_string(queries.size()) + " queries");
  }
  if (sets.empty()) throw DataError("facet_set_stats: no facet sets");
  std::size_t total = 0;
  std::size_t chars = 0;
  std::size_t with_query = 0;
  std::size_t unique = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const std::string q = to_lower(trim(queries[i]));
    std::set<std::string> distinct;
    for (const std::string& f : sets[i]) {
      ++total;
      chars += utf8_length(f);
      if (to_lower(f).find(q) != std::string::npos) ++with_query;
      distinct.insert(normalize(f).joined());
    }
    unique += distinct.size();
  }
  FacetSetStats s;
  s.avg_set_size = static_cast<double>(total) / static_cast<double>(sets.size());
  if (total == 0) return s;
  const double t = static_cast<double>(total);
  s.avg_facet_length_chars = static_cast<double>(chars) / t;
  s.query_inclusion_pct = 100.0 * static_cast<double>(with_query) / t;
  s.duplicate_proportion = static_cast<double>(total - unique) / t;
  return s;
}

MetricScores score_pair(std::span<const std::string> pred, std::span<const std::string> gold,
                        const SimilarityBackend& backend) {
  MetricScores s;
  s.term_overlap_f1 = term_overlap_f1(pred, gold);
  s.exact_match_f1 = exact_match_f1(pred, gold);
  s.set_bleu_mean = set_bleu_mean(pred, gold);
  s.set_bertscore_f1 = set_bertscore_f1(pred, gold, backend);
  return s;
}

MetricReport score_predictions(const std::vector<QueryFacets>& pred, const std::vector<QueryFacets>& gold,
                               const SimilarityBackend& backend) {
  if (gold.empty()) throw DataError("score: empty gold file");
  std::map<std::string, const QueryFacets*> by_query;
  for (const QueryFacets& p : pred) by_query.emplace(normalize_query(p.query), &p);

  std::vector<std::string> missing;
  for (const QueryFacets& g : gold) {
    if (!by_query.contains(normalize_query(g.query))) missing.push_back(g.query);
  }
  if (!missing.empty()) throw DataError("predictions missing for gold queries: " + join(missing, ", "));

  MetricReport report;
  std::vector<std::vector<std::string>> sets;
  std::vector<std::string> queries;
  for (const QueryFacets& g : gold) {
    const QueryFacets& p = *by_query.at(normalize_query(g.query));
    const MetricScores s = score_pair(p.facets, g.facets, backend);
    report.scores.term_overlap_f1 += s.term_overlap_f1;
    report.scores.exact_match_f1 += s.exact_match_f1;
    report.scores.set_bleu_mean += s.set_bleu_mean;
    report.scores.set_bertscore_f1 += s.set_bertscore_f1;
    sets.push_back(p.facets);
    queries.push_back(g.query);
  }
  const double n = static_cast<double>(gold.size());
  report.scores.term_overlap_f1 /= n;
  report.scores.exact_match_f1 /= n;
  report.scores.set_bleu_mean /= n;
  report.scores.set_bertscore_f1 /= n;
  report.stats = facet_set_stats(sets, queries);
  report.query_count = gold.size();
  return report;
}

MetricReport score_run(const std::string& pred_file, const std::string& gold_file, const SimilarityBackend& backend) {
  return score_predictions(read_predictions(pred_file), read_predictions(gold_file), backend);
}

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

std::string report_to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["query_count"] = report.query_count;
  j["term_overlap_f1"] = round_to(report.scores.term_overlap_f1, 4);
  j["exact_match_f1"] = round_to(report.scores.exact_match_f1, 4);
  j["set_bleu_mean"] = round_to(report.scores.set_bleu_mean, 4);
  j["set_bertscore_f1"] = round_to(report.scores.set_bertscore_f1, 4);
  nlohmann::ordered_json stats;
  stats["avg_set_size"] = round_to(report.stats.avg_set_size, 4);
  stats["avg_facet_length_chars"] = round_to(report.stats.avg_facet_length_chars, 4);
  stats["query_inclusion_pct"] = round_to(report.stats.query_inclusion_pct, 4);
  stats["duplicate_proportion"] = round_to(report.stats.duplicate_proportion, 4);
  j["stats"] = stats;
  return j.dump(2) + "\n";
}

MetricReport report_from_json(std::string_view text) {
  MetricReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.query_count = j.at("query_count").get<std::size_t>();
    r.scores.term_overlap_f1 = j.at("term_overlap_f1").get<double>();
    r.scores.exact_match_f1 = j.at("exact_match_f1").get<double>();
    r.scores.set_bleu_mean = j.at("set_bleu_mean").get<double>();
    r.scores.set_bertscore_f1 = j.at("set_bertscore_f1").get<double>();
    const auto& s = j.at("stats");
    r.stats.avg_set_size = s.at("avg_set_size").get<double>();
    r.stats.avg_facet_length_chars = s.at("avg_facet_length_chars").get<double>();
    r.stats.query_inclusion_pct = s.at("query_inclusion_pct").get<double>();
    r.stats.duplicate_proportion = s.at("duplicate_proportion").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
  return r;
}

std::string format_report_table(const std::vector<ReportRow>& rows) {
  const std::vector<std::string> header = {"Model",
                                           "Term Overlap (F1)",
                                           "Exact Match (F1)",
                                           "Set BLEU-mean",
                                           "Set BERTScore (F1)",
                                           "Avg set size",
                                           "Avg facet length",
                                           "Query included (%)",
                                           "Duplicate proportion"};
  std::vector<std::vector<std::string>> cells;
  for (const ReportRow& row : rows) {
    const MetricReport& r = row.report;
    cells.push_back({row.label, fmt::format("{:.4f}", r.scores.term_overlap_f1),
                     fmt::format("{:.4f}", r.scores.exact_match_f1), fmt::format("{:.4f}", r.scores.set_bleu_mean),
                     fmt::format("{:.4f}", r.scores.set_bertscore_f1), fmt::format("{:.2f}", r.stats.avg_set_size),
                     fmt::format("{:.2f}", r.stats.avg_facet_length_chars),
                     fmt::format("{:.2f}", r.stats.query_inclusion_pct),
                     fmt::format("{:.2f}", r.stats.duplicate_proportion)});
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  auto emit = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) line += " | ";
      line += c == 0 ? fmt::format("{:<{}}", row[c], width[c]) : fmt::format("{:>{}}", row[c], width[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    return line + "\n";
  };
  std::string out = emit(header);
  std::size_t rule = 0;
  for (std::size_t w : width) rule += w;
  rule += 3 * (width.size() - 1);
  out += std::string(rule, '-') + "\n";
  for (const auto& row : cells) out += emit(row);
  return out;
}

}  // namespace facetpipe
