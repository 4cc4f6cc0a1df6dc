#include "facetpipe/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <map>
#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "facetpipe/error.hpp"
#include "facetpipe/text.hpp"

namespace facetpipe {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kMetricsFile = "metrics.json";
constexpr const char* kJudgeFile = "judge.jsonl";

std::string utc_now(bool compact) {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, compact ? "%Y%m%dT%H%M%S" : "%Y-%m-%dT%H:%M:%S", &tm);
  return compact ? fmt::format("{}{:03d}Z", buf, ms) : fmt::format("{}.{:03d}Z", buf, ms);
}

std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

std::string_view to_string(BackendKind kind) { return kind == BackendKind::kHttp ? "http" : "mock"; }

BackendKind parse_backend_kind(std::string_view text) {
  if (text == "http") return BackendKind::kHttp;
  if (text == "mock") return BackendKind::kMock;
  throw ConfigError("unknown backend kind '" + std::string(text) + "'");
}

void check_keys(const toml::table& t, const std::string& where, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, value] : t) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key.str()) == allowed.end()) {
      throw ConfigError("unknown key '" + std::string(key.str()) + "' in [" + where + "]");
    }
  }
}

template <typename T>
T get_or(const toml::table& t, std::string_view key, T fallback) {
  const toml::node* node = t.get(key);
  if (node == nullptr) return fallback;
  if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node->value<std::string>()) return *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node->value<bool>()) return *v;
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto v = node->value<double>()) return static_cast<T>(*v);
  } else {
    if (auto v = node->value<std::int64_t>()) return static_cast<T>(*v);
  }
  throw ConfigError("config key '" + std::string(key) + "' has the wrong type");
}

BackendConfig read_backend(const toml::table* t, const std::string& where, const fs::path& base) {
  BackendConfig c;
  if (t == nullptr) return c;
  check_keys(*t, where,
             {"kind", "endpoint_url", "model", "timeout_ms", "max_retries", "max_concurrency", "backoff_base_ms",
              "backoff_factor", "jitter_fraction", "headers", "mock_table", "enabled", "randomize_order",
              "max_new_tokens", "temperature", "top_p"});
  c.kind = parse_backend_kind(get_or<std::string>(*t, "kind", "mock"));
  c.endpoint_url = get_or<std::string>(*t, "endpoint_url", "");
  c.model = get_or<std::string>(*t, "model", "");
  c.timeout_ms = get_or<int>(*t, "timeout_ms", c.timeout_ms);
  c.max_retries = get_or<int>(*t, "max_retries", c.max_retries);
  c.max_concurrency = get_or<int>(*t, "max_concurrency", c.max_concurrency);
  c.backoff_base_ms = get_or<int>(*t, "backoff_base_ms", c.backoff_base_ms);
  c.backoff_factor = get_or<double>(*t, "backoff_factor", c.backoff_factor);
  c.jitter_fraction = get_or<double>(*t, "jitter_fraction", c.jitter_fraction);
  if (const toml::table* h = (*t)["headers"].as_table()) {
    for (const auto& [k, v] : *h) {
      auto s = v.value<std::string>();
      if (!s) throw ConfigError("header values in [" + where + ".headers] must be strings");
      c.headers[std::string(k.str())] = *s;
    }
  }
  c.mock_table_path = resolve(base, get_or<std::string>(*t, "mock_table", ""));
  if (!c.mock_table_path.empty()) c.mock_rules = load_mock_rules(c.mock_table_path);
  return c;
}

ordered_json backend_to_json(const BackendConfig& c) {
  ordered_json j;
  j["kind"] = to_string(c.kind);
  j["endpoint_url"] = c.endpoint_url;
  j["model"] = c.model;
  j["timeout_ms"] = c.timeout_ms;
  j["max_retries"] = c.max_retries;
  j["max_concurrency"] = c.max_concurrency;
  j["backoff_base_ms"] = c.backoff_base_ms;
  j["backoff_factor"] = c.backoff_factor;
  j["jitter_fraction"] = c.jitter_fraction;
  ordered_json headers = ordered_json::object();
  for (const auto& [k, v] : c.headers) {
    // Credentials are never persisted; they come back from the environment.
    if (to_lower(k) == "authorization" || to_lower(k).find("key") != std::string::npos) continue;
    headers[k] = v;
  }
  j["headers"] = headers;
  j["mock_table"] = c.mock_table_path;
  j["mock_table_sha256"] = c.mock_table_path.empty() ? "" : sha256_file(c.mock_table_path);
  return j;
}

BackendConfig backend_from_json(const json& j) {
  BackendConfig c;
  c.kind = parse_backend_kind(j.at("kind").get<std::string>());
  c.endpoint_url = j.at("endpoint_url").get<std::string>();
  c.model = j.at("model").get<std::string>();
  c.timeout_ms = j.at("timeout_ms").get<int>();
  c.max_retries = j.at("max_retries").get<int>();
  c.max_concurrency = j.at("max_concurrency").get<int>();
  c.backoff_base_ms = j.at("backoff_base_ms").get<int>();
  c.backoff_factor = j.at("backoff_factor").get<double>();
  c.jitter_fraction = j.at("jitter_fraction").get<double>();
  for (const auto& [k, v] : j.at("headers").items()) c.headers[k] = v.get<std::string>();
  c.mock_table_path = j.at("mock_table").get<std::string>();
  if (!c.mock_table_path.empty()) c.mock_rules = load_mock_rules(c.mock_table_path);
  return c;
}

void apply_env(BackendConfig& c) {
  if (c.kind == BackendKind::kHttp) apply_env_overrides(c);
}

std::string file_name(const fs::path& p) { return p.filename().string(); }

std::string predictions_file(FacetStage stage) { return fmt::format("predictions.{}.jsonl", to_string(stage)); }

ordered_json demos_to_json(const std::vector<Demonstration>& demos) {
  ordered_json arr = ordered_json::array();
  for (const Demonstration& d : demos) {
    arr.push_back({{"query", d.query}, {"predicted", d.predicted}, {"label", d.label}});
  }
  return arr;
}

std::vector<Demonstration> demos_from_json(const json& arr) {
  std::vector<Demonstration> out;
  for (const json& d : arr) {
    out.push_back({d.at("query").get<std::string>(), d.at("predicted").get<std::vector<std::string>>(),
                   d.at("label").get<std::vector<std::string>>()});
  }
  return out;
}

std::vector<std::string> queries_of(const std::vector<QueryFacets>& rows) {
  std::vector<std::string> out;
  for (const QueryFacets& r : rows) out.push_back(r.query);
  return out;
}

}  // namespace

std::string_view to_string(EditingMode mode) noexcept {
  switch (mode) {
    case EditingMode::kNone:
      return "none";
    case EditingMode::kEdit:
      return "edit";
    case EditingMode::kZeroShot:
      return "zero_shot";
    case EditingMode::kFewShot:
      return "few_shot";
  }
  return "";
}

EditingMode parse_editing_mode(std::string_view text) {
  if (text == "none") return EditingMode::kNone;
  if (text == "edit") return EditingMode::kEdit;
  if (text == "zero_shot") return EditingMode::kZeroShot;
  if (text == "few_shot") return EditingMode::kFewShot;
  throw ConfigError("unknown editing mode '" + std::string(text) + "'");
}

ExperimentConfig parse_config(const std::string& toml_text, const fs::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("config: {} (line {})", e.description(), e.source().begin.line));
  }
  check_keys(root, "root",
             {"seed", "run_root", "tasks", "input_mode", "editing", "corpus", "small_model", "llm", "judge",
              "editing_options", "metrics"});

  ExperimentConfig c;
  c.seed = get_or<std::uint64_t>(root, "seed", 0);
  c.run_root = resolve(base_dir, get_or<std::string>(root, "run_root", "runs"));
  if (const toml::array* tasks = root["tasks"].as_array()) {
    c.tasks.clear();
    for (const auto& t : *tasks) {
      auto s = t.value<std::string>();
      if (!s) throw ConfigError("tasks must be strings");
      c.tasks.insert(parse_task_kind(*s));
    }
  }
  c.input_mode = parse_input_mode(get_or<std::string>(root, "input_mode", "Q"));
  c.editing = parse_editing_mode(get_or<std::string>(root, "editing", "none"));

  if (const toml::table* t = root["corpus"].as_table()) {
    check_keys(*t, "corpus", {"train", "test", "serp", "max_snippets", "snippet_path", "related_path", "separator"});
    c.train_path = resolve(base_dir, get_or<std::string>(*t, "train", ""));
    c.test_path = resolve(base_dir, get_or<std::string>(*t, "test", ""));
    c.serp_path = resolve(base_dir, get_or<std::string>(*t, "serp", ""));
    c.serp.max_snippets = get_or<std::size_t>(*t, "max_snippets", c.serp.max_snippets);
    c.serp.snippet_path = get_or<std::string>(*t, "snippet_path", c.serp.snippet_path);
    c.serp.related_path = get_or<std::string>(*t, "related_path", c.serp.related_path);
    c.input.max_snippets = c.serp.max_snippets;
    c.input.separator = get_or<std::string>(*t, "separator", c.input.separator);
  }

  c.small_model = read_backend(root["small_model"].as_table(), "small_model", base_dir);
  if (const toml::table* t = root["small_model"].as_table()) {
    c.small_max_new_tokens = get_or<int>(*t, "max_new_tokens", c.small_max_new_tokens);
  }
  c.llm = read_backend(root["llm"].as_table(), "llm", base_dir);
  c.judge = read_backend(root["judge"].as_table(), "judge", base_dir);
  if (const toml::table* t = root["judge"].as_table()) {
    c.judge_enabled = get_or<bool>(*t, "enabled", false);
    c.judge_options.randomize_order = get_or<bool>(*t, "randomize_order", false);
    c.judge_options.max_new_tokens = get_or<int>(*t, "max_new_tokens", c.judge_options.max_new_tokens);
    c.judge_options.temperature = get_or<double>(*t, "temperature", c.judge_options.temperature);
    c.judge_options.top_p = get_or<double>(*t, "top_p", c.judge_options.top_p);
  }
  c.judge_options.seed = c.seed;

  if (const toml::table* t = root["editing_options"].as_table()) {
    check_keys(*t, "editing_options",
               {"marker_style", "templates_dir", "max_facets", "max_new_tokens", "temperature", "top_p"});
    c.marker_style = parse_marker_style(get_or<std::string>(*t, "marker_style", "user_assistant"));
    c.templates_dir = resolve(base_dir, get_or<std::string>(*t, "templates_dir", ""));
    c.edit_options.max_facets = get_or<std::size_t>(*t, "max_facets", c.edit_options.max_facets);
    c.edit_options.max_new_tokens = get_or<int>(*t, "max_new_tokens", c.edit_options.max_new_tokens);
    c.edit_options.temperature = get_or<double>(*t, "temperature", c.edit_options.temperature);
    c.edit_options.top_p = get_or<double>(*t, "top_p", c.edit_options.top_p);
  }
  c.edit_options.style = c.marker_style;
  c.edit_options.seed = c.seed;

  if (const toml::table* t = root["metrics"].as_table()) {
    check_keys(*t, "metrics", {"similarity", "embedding_endpoint"});
    c.similarity = get_or<std::string>(*t, "similarity", c.similarity);
    c.embedding_endpoint = get_or<std::string>(*t, "embedding_endpoint", "");
  }

  apply_env(c.small_model);
  apply_env(c.llm);
  apply_env(c.judge);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, fs::absolute(path).parent_path());
}

void force_mock(ExperimentConfig& config) {
  for (BackendConfig* b : {&config.small_model, &config.llm, &config.judge}) b->kind = BackendKind::kMock;
}

void validate(const ExperimentConfig& config) {
  if (config.tasks.empty()) throw ConfigError("config: tasks must not be empty");
  if (config.test_path.empty()) throw ConfigError("config: [corpus].test is required");
  if ((config.editing == EditingMode::kEdit || config.editing == EditingMode::kFewShot) &&
      config.train_path.empty()) {
    throw ConfigError("config: editing mode '" + std::string(to_string(config.editing)) +
                      "' needs [corpus].train for demonstrations");
  }
  if (!config.tasks.contains(TaskKind::kFacet)) throw ConfigError("config: tasks must include facet");
  validate(config.small_model);
  if (config.editing != EditingMode::kNone) validate(config.llm);
  if (config.judge_enabled) validate(config.judge);
}

std::string config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["tasks"] = ordered_json::array();
  for (TaskKind t : c.tasks) j["tasks"].push_back(to_string(t));
  j["input_mode"] = to_string(c.input_mode);
  j["editing"] = to_string(c.editing);
  j["run_root"] = c.run_root;
  j["corpus"] = {{"train", c.train_path},
                 {"test", c.test_path},
                 {"serp", c.serp_path},
                 {"max_snippets", c.serp.max_snippets},
                 {"snippet_path", c.serp.snippet_path},
                 {"related_path", c.serp.related_path},
                 {"separator", c.input.separator}};
  j["small_model"] = backend_to_json(c.small_model);
  j["small_model"]["max_new_tokens"] = c.small_max_new_tokens;
  j["llm"] = backend_to_json(c.llm);
  j["judge"] = backend_to_json(c.judge);
  j["judge"]["enabled"] = c.judge_enabled;
  j["judge"]["randomize_order"] = c.judge_options.randomize_order;
  j["judge"]["max_new_tokens"] = c.judge_options.max_new_tokens;
  j["judge"]["temperature"] = c.judge_options.temperature;
  j["judge"]["top_p"] = c.judge_options.top_p;
  j["editing_options"] = {{"marker_style", to_string(c.marker_style)},
                          {"templates_dir", c.templates_dir},
                          {"max_facets", c.edit_options.max_facets},
                          {"max_new_tokens", c.edit_options.max_new_tokens},
                          {"temperature", c.edit_options.temperature},
                          {"top_p", c.edit_options.top_p}};
  j["metrics"] = {{"similarity", c.similarity}, {"embedding_endpoint", c.embedding_endpoint}};
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& json_text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(json_text);
    c.seed = j.at("seed").get<std::uint64_t>();
    c.tasks.clear();
    for (const auto& t : j.at("tasks")) c.tasks.insert(parse_task_kind(t.get<std::string>()));
    c.input_mode = parse_input_mode(j.at("input_mode").get<std::string>());
    c.editing = parse_editing_mode(j.at("editing").get<std::string>());
    c.run_root = j.at("run_root").get<std::string>();
    const json& corpus = j.at("corpus");
    c.train_path = corpus.at("train").get<std::string>();
    c.test_path = corpus.at("test").get<std::string>();
    c.serp_path = corpus.at("serp").get<std::string>();
    c.serp.max_snippets = corpus.at("max_snippets").get<std::size_t>();
    c.serp.snippet_path = corpus.at("snippet_path").get<std::string>();
    c.serp.related_path = corpus.at("related_path").get<std::string>();
    c.input.max_snippets = c.serp.max_snippets;
    c.input.separator = corpus.at("separator").get<std::string>();
    c.small_model = backend_from_json(j.at("small_model"));
    c.small_max_new_tokens = j.at("small_model").at("max_new_tokens").get<int>();
    c.llm = backend_from_json(j.at("llm"));
    c.judge = backend_from_json(j.at("judge"));
    c.judge_enabled = j.at("judge").at("enabled").get<bool>();
    c.judge_options.randomize_order = j.at("judge").at("randomize_order").get<bool>();
    c.judge_options.max_new_tokens = j.at("judge").at("max_new_tokens").get<int>();
    c.judge_options.temperature = j.at("judge").at("temperature").get<double>();
    c.judge_options.top_p = j.at("judge").at("top_p").get<double>();
    c.judge_options.seed = c.seed;
    const json& e = j.at("editing_options");
    c.marker_style = parse_marker_style(e.at("marker_style").get<std::string>());
    c.templates_dir = e.at("templates_dir").get<std::string>();
    c.edit_options.max_facets = e.at("max_facets").get<std::size_t>();
    c.edit_options.max_new_tokens = e.at("max_new_tokens").get<int>();
    c.edit_options.temperature = e.at("temperature").get<double>();
    c.edit_options.top_p = e.at("top_p").get<double>();
    c.edit_options.style = c.marker_style;
    c.edit_options.seed = c.seed;
    c.similarity = j.at("metrics").at("similarity").get<std::string>();
    c.embedding_endpoint = j.at("metrics").at("embedding_endpoint").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("stored config: ") + e.what());
  }
  apply_env(c.small_model);
  apply_env(c.llm);
  apply_env(c.judge);
  return c;
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(config_to_json(config)); }

Corpus load_experiment_corpus(const ExperimentConfig& config) {
  std::vector<Corpus> parts;
  if (!config.train_path.empty()) {
    Corpus train = load_corpus(config.train_path, Split::kTrain);
    if (!config.serp_path.empty()) train = attach_serp(train, config.serp_path, config.serp);
    parts.push_back(std::move(train));
  }
  Corpus test = load_corpus(config.test_path, Split::kTest);
  for (QueryRecord& r : test.records) {
    if (r.split != Split::kTest) throw DataError("test corpus holds a train-split record: '" + r.query + "'");
  }
  parts.push_back(std::move(test));
  return merge_corpora(parts);
}

PromptLibrary load_prompt_library(const ExperimentConfig& config) {
  return config.templates_dir.empty() ? PromptLibrary::builtin() : PromptLibrary::from_directory(config.templates_dir);
}

std::vector<QueryFacets> generate_small(const Backend& backend, const std::vector<std::string>& queries,
                                        int max_new_tokens, std::optional<std::uint64_t> seed) {
  if (queries.empty()) return {};
  std::vector<GenerationRequest> requests;
  for (const std::string& q : queries) {
    GenerationRequest r;
    r.prompt = build_input(TaskKind::kFacet, q, InputMode::kQ, {}, Split::kTest);
    r.max_new_tokens = max_new_tokens;
    r.temperature = 0.1;
    r.top_p = 1.0;
    r.seed = seed;
    requests.push_back(std::move(r));
  }
  std::vector<GenerationResponse> responses;
  try {
    responses = generate_batch(backend, requests);
  } catch (const BatchError& e) {
    throw e.with_query(queries.at(e.index()));
  }
  std::vector<QueryFacets> out;
  for (std::size_t i = 0; i < queries.size(); ++i) out.push_back({queries[i], parse_target(responses[i].text)});
  return out;
}

std::vector<const QueryRecord*> demonstration_candidates(const Corpus& corpus, std::uint64_t seed,
                                                         std::size_t count) {
  std::vector<const QueryRecord*> train;
  for (const QueryRecord* r : corpus.in_split(Split::kTrain)) {
    if (!r->facets.empty()) train.push_back(r);
  }
  std::vector<const QueryRecord*> out;
  for (std::size_t idx : seeded_permutation(train.size(), seed)) {
    if (out.size() == count) break;
    out.push_back(train[idx]);
  }
  return out;
}

std::array<Demonstration, 2> pick_demonstrations(const std::vector<Demonstration>& candidates,
                                                 const std::string& query) {
  std::array<Demonstration, 2> picked;
  std::size_t n = 0;
  const std::string key = normalize_query(query);
  for (const Demonstration& d : candidates) {
    if (n == 2) break;
    if (normalize_query(d.query) == key) continue;
    picked[n++] = d;
  }
  if (n < 2) throw DataError("fewer than two demonstrations available for query '" + query + "'");
  return picked;
}

std::vector<QueryFacets> gold_from_corpus(const Corpus& corpus) {
  std::vector<QueryFacets> gold;
  for (const QueryRecord* r : corpus.in_split(Split::kTest)) gold.push_back({r->query, r->facets});
  return gold;
}

// ---- run ----

namespace {

class RunWriter {
 public:
  RunWriter(fs::path dir, ordered_json manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {
    manifest_["stages"] = ordered_json::array();
    manifest_["artifacts"] = ordered_json::array();
  }

  void write_artifact(const std::string& name, std::string_view bytes) {
    write_file((dir_ / name).string(), bytes);
    for (auto& a : manifest_["artifacts"]) {
      if (a["file"] == name) {
        a["sha256"] = sha256_hex(bytes);
        return;
      }
    }
    manifest_["artifacts"].push_back({{"file", name}, {"sha256", sha256_hex(bytes)}});
  }

  template <typename Fn>
  void stage(const std::string& name, Fn&& body) {
    ordered_json entry;
    entry["name"] = name;
    entry["started_at"] = utc_now(false);
    std::vector<std::string> artifacts;
    try {
      body(artifacts);
    } catch (const std::exception& e) {
      entry["status"] = "failed";
      entry["finished_at"] = utc_now(false);
      entry["artifacts"] = artifacts;
      entry["error"] = e.what();
      manifest_["stages"].push_back(entry);
      manifest_["status"] = "failed";
      flush();
      throw;
    }
    entry["status"] = "ok";
    entry["finished_at"] = utc_now(false);
    entry["artifacts"] = artifacts;
    manifest_["stages"].push_back(entry);
  }

  ordered_json& manifest() { return manifest_; }

  void flush() { write_file((dir_ / kManifestFile).string(), manifest_.dump(2) + "\n"); }

 private:
  fs::path dir_;
  ordered_json manifest_;
};

std::string make_run_id(const ExperimentConfig& config, const fs::path& root) {
  const std::string base = utc_now(true) + "-" + config_hash(config).substr(0, 8);
  std::string id = base;
  for (int n = 2; fs::exists(root / id); ++n) id = base + "-" + std::to_string(n);
  return id;
}

std::vector<EditRequest> make_edit_requests(const std::vector<QueryFacets>& small,
                                            const std::vector<Demonstration>& candidates) {
  std::vector<EditRequest> out;
  for (const QueryFacets& row : small) {
    EditRequest req;
    req.query = row.query;
    req.predicted_facets = {row.facets, FacetStage::kSmall};
    req.demonstrations = pick_demonstrations(candidates, row.query);
    out.push_back(std::move(req));
  }
  return out;
}

std::vector<QueryFacets> run_edit(const Backend& llm, const PromptLibrary& lib, const std::vector<QueryFacets>& small,
                                  const std::vector<Demonstration>& candidates, const EditOptions& options) {
  if (small.empty()) return {};
  const auto results = edit_facets_batch(llm, lib, make_edit_requests(small, candidates), options);
  std::vector<QueryFacets> out;
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (results[i].flagged) spdlog::warn("edit response for '{}' held no facets", small[i].query);
    out.push_back({small[i].query, results[i].edited.facets});
  }
  return out;
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options) {
  validate(config);
  const std::vector<QueryFacets> gold = gold_from_corpus(corpus);
  if (gold.empty()) throw DataError("run: corpus has no test-split records");

  const fs::path root(config.run_root);
  fs::create_directories(root);
  RunManifest result;
  result.run_id = options.run_id.empty() ? make_run_id(config, root) : options.run_id;
  result.run_dir = root / result.run_id;
  if (fs::exists(result.run_dir)) throw ConfigError("run directory already exists: " + result.run_dir.string());
  fs::create_directories(result.run_dir);
  result.config_hash = config_hash(config);
  result.corpus_hash = sha256_hex(corpus_to_jsonl(corpus));
  result.seed = config.seed;

  const PromptLibrary lib = load_prompt_library(config);
  const auto small_backend = make_backend(config.small_model);
  std::unique_ptr<Backend> llm_backend;
  if (config.editing != EditingMode::kNone) llm_backend = make_backend(config.llm);

  ordered_json m;
  m["run_id"] = result.run_id;
  m["status"] = "running";
  m["config_hash"] = result.config_hash;
  m["corpus_hash"] = result.corpus_hash;
  m["seed"] = config.seed;
  m["config"] = ordered_json::parse(config_to_json(config));
  m["backends"] = ordered_json::array();
  m["backends"].push_back({{"role", "small_model"},
                           {"id", small_backend->id()},
                           {"kind", to_string(config.small_model.kind)}});
  if (llm_backend) {
    m["backends"].push_back({{"role", "llm"}, {"id", llm_backend->id()}, {"kind", to_string(config.llm.kind)}});
  }
  if (config.judge_enabled) {
    m["backends"].push_back({{"role", "judge"},
                             {"id", config.judge.kind == BackendKind::kMock ? "mock" : config.judge.endpoint_url},
                             {"kind", to_string(config.judge.kind)}});
  }
  m["templates"] = ordered_json::object();
  for (TemplateId id : {TemplateId::kEdit, TemplateId::kZeroShot, TemplateId::kFewShot, TemplateId::kJudge}) {
    m["templates"][std::string(to_string(id))] = lib.hash(id);
  }
  m["demonstrations"] = ordered_json::array();
  m["final_predictions"] = "";

  RunWriter run(result.run_dir, std::move(m));
  run.flush();

  std::vector<std::string> test_queries = queries_of(gold);
  std::vector<QueryFacets> small;
  std::vector<QueryFacets> final_predictions;
  std::string final_file;

  const bool llm_only = config.editing == EditingMode::kZeroShot || config.editing == EditingMode::kFewShot;
  run.stage("generate", [&](std::vector<std::string>& artifacts) {
    if (!llm_only) {
      small = generate_small(*small_backend, test_queries, config.small_max_new_tokens, config.seed);
      final_file = predictions_file(FacetStage::kSmall);
      run.write_artifact(final_file, predictions_to_jsonl(small));
      final_predictions = small;
    } else if (config.editing == EditingMode::kZeroShot) {
      const auto parsed = generate_zero_shot(*llm_backend, lib, test_queries, config.edit_options);
      for (std::size_t i = 0; i < parsed.size(); ++i) final_predictions.push_back({test_queries[i], parsed[i].set.facets});
      final_file = predictions_file(FacetStage::kZeroShot);
      run.write_artifact(final_file, predictions_to_jsonl(final_predictions));
    } else {
      std::vector<Demonstration> candidates;
      for (const QueryRecord* r : demonstration_candidates(corpus, config.seed)) {
        candidates.push_back({r->query, {}, r->facets});
      }
      run.manifest()["demonstrations"] = demos_to_json(candidates);
      std::vector<std::array<FewShotDemo, 2>> demos;
      for (const std::string& q : test_queries) {
        const auto picked = pick_demonstrations(candidates, q);
        demos.push_back({FewShotDemo{picked[0].query, picked[0].label}, FewShotDemo{picked[1].query, picked[1].label}});
      }
      const auto parsed = generate_few_shot(*llm_backend, lib, test_queries, demos, config.edit_options);
      for (std::size_t i = 0; i < parsed.size(); ++i) final_predictions.push_back({test_queries[i], parsed[i].set.facets});
      final_file = predictions_file(FacetStage::kFewShot);
      run.write_artifact(final_file, predictions_to_jsonl(final_predictions));
    }
    artifacts.push_back(final_file);
  });

  if (config.editing == EditingMode::kEdit) {
    run.stage("edit", [&](std::vector<std::string>& artifacts) {
      std::vector<Demonstration> candidates;
      std::vector<std::string> demo_queries;
      for (const QueryRecord* r : demonstration_candidates(corpus, config.seed)) {
        candidates.push_back({r->query, {}, r->facets});
        demo_queries.push_back(r->query);
      }
      const auto demo_predictions =
          generate_small(*small_backend, demo_queries, config.small_max_new_tokens, config.seed);
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        candidates[i].predicted = demo_predictions[i].facets;
        if (candidates[i].predicted.empty()) candidates[i].predicted = candidates[i].label;
      }
      run.manifest()["demonstrations"] = demos_to_json(candidates);
      final_predictions = run_edit(*llm_backend, lib, small, candidates, config.edit_options);
      final_file = predictions_file(FacetStage::kEdited);
      run.write_artifact(final_file, predictions_to_jsonl(final_predictions));
      artifacts.push_back(final_file);
    });
  }
  run.manifest()["final_predictions"] = final_file;
  result.final_predictions = final_file;

  run.stage("score", [&](std::vector<std::string>& artifacts) {
    const auto similarity = make_similarity(config.similarity, config.embedding_endpoint);
    const MetricReport report = score_predictions(final_predictions, gold, *similarity);
    run.write_artifact(kMetricsFile, report_to_json(report));
    artifacts.push_back(kMetricsFile);
    result.metrics = report;
  });

  if (config.judge_enabled && config.editing == EditingMode::kEdit) {
    run.stage("judge", [&](std::vector<std::string>& artifacts) {
      const auto judge_backend = make_backend(config.judge);
      std::vector<JudgeItem> items;
      for (std::size_t i = 0; i < final_predictions.size(); ++i) {
        if (final_predictions[i].facets.empty() || small[i].facets.empty()) {
          spdlog::warn("judge: skipping '{}' (empty facet set)", final_predictions[i].query);
          continue;
        }
        items.push_back({final_predictions[i].query, {final_predictions[i].facets, FacetStage::kEdited},
                         {small[i].facets, FacetStage::kSmall}});
      }
      const auto verdicts = judge_batch(*judge_backend, lib, items, config.judge_options);
      std::vector<std::string> queries;
      for (const JudgeItem& it : items) queries.push_back(it.query);
      run.write_artifact(kJudgeFile, judge_results_to_jsonl(queries, "edited", "small", verdicts));
      artifacts.push_back(kJudgeFile);
      const WinReport wr = aggregate_verdicts(verdicts);
      result.judge = wr;
      run.manifest()["judge"] = {{"a_wins", wr.a_wins},
                                 {"b_wins", wr.b_wins},
                                 {"excluded", wr.excluded},
                                 {"win_ratio_a", round_to(wr.win_ratio_a, 2)}};
    });
  }

  run.manifest()["status"] = "ok";
  run.flush();

  for (const auto& s : run.manifest()["stages"]) {
    StageEntry e;
    e.name = s["name"];
    e.status = s["status"];
    e.started_at = s["started_at"];
    e.finished_at = s["finished_at"];
    e.artifacts = s["artifacts"].get<std::vector<std::string>>();
    result.stages.push_back(std::move(e));
  }
  return result;
}

RunManifest read_manifest(const fs::path& run_dir) {
  const fs::path path = run_dir / kManifestFile;
  if (!fs::exists(path)) throw DataError("no manifest in run directory: " + run_dir.string());
  RunManifest r;
  try {
    const json j = json::parse(read_file(path.string()));
    r.run_id = j.at("run_id").get<std::string>();
    r.run_dir = run_dir;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.corpus_hash = j.at("corpus_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.final_predictions = j.value("final_predictions", "");
    for (const json& s : j.at("stages")) {
      StageEntry e;
      e.name = s.at("name").get<std::string>();
      e.status = s.at("status").get<std::string>();
      e.started_at = s.at("started_at").get<std::string>();
      e.finished_at = s.value("finished_at", "");
      e.artifacts = s.value("artifacts", std::vector<std::string>{});
      e.error = s.value("error", "");
      r.stages.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const fs::path metrics = run_dir / kMetricsFile;
  if (fs::exists(metrics)) r.metrics = report_from_json(read_file(metrics.string()));
  return r;
}

VerifyResult verify_run(const fs::path& run_dir) {
  VerifyResult v;
  const json manifest = json::parse(read_file((run_dir / kManifestFile).string()));
  std::map<std::string, int> references;
  std::map<std::string, std::string> hashes;
  for (const json& a : manifest.at("artifacts")) {
    const std::string file = a.at("file").get<std::string>();
    ++references[file];
    hashes[file] = a.at("sha256").get<std::string>();
  }
  for (const auto& [file, count] : references) {
    if (count != 1) v.problems.push_back(file + " is referenced " + std::to_string(count) + " times");
  }
  std::set<std::string> present;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = file_name(entry.path());
    if (name == kManifestFile) continue;
    present.insert(name);
    if (!references.contains(name)) {
      v.problems.push_back(name + " is not referenced by the manifest");
    } else if (sha256_file(entry.path().string()) != hashes[name]) {
      v.problems.push_back(name + " does not match its recorded hash");
    }
  }
  for (const auto& [file, count] : references) {
    if (!present.contains(file)) v.problems.push_back(file + " is missing");
  }
  v.ok = v.problems.empty();
  return v;
}

bool rerun_edit_stage(const fs::path& run_dir) {
  const json manifest = json::parse(read_file((run_dir / kManifestFile).string()));
  const ExperimentConfig config = config_from_json(manifest.at("config").dump());
  if (config.editing != EditingMode::kEdit) throw ConfigError("run " + run_dir.string() + " has no edit stage");
  const auto small = read_predictions((run_dir / predictions_file(FacetStage::kSmall)).string());
  const auto candidates = demos_from_json(manifest.at("demonstrations"));
  const PromptLibrary lib = load_prompt_library(config);
  const auto llm = make_backend(config.llm);
  const std::string bytes = predictions_to_jsonl(run_edit(*llm, lib, small, candidates, config.edit_options));
  const std::string name = predictions_file(FacetStage::kEdited);
  write_file((run_dir / name).string(), bytes);
  for (const json& a : manifest.at("artifacts")) {
    if (a.at("file") == name) return a.at("sha256").get<std::string>() == sha256_hex(bytes);
  }
  return false;
}

std::string report(const std::vector<fs::path>& run_dirs) {
  std::vector<ReportRow> rows;
  for (const fs::path& dir : run_dirs) {
    const RunManifest m = read_manifest(dir);
    if (!m.metrics) throw DataError("run " + m.run_id + " has no score stage (metrics.json missing)");
    rows.push_back({m.run_id, *m.metrics});
  }
  return format_report_table(rows);
}

std::vector<QueryFacets> load_predictions_source(const fs::path& path) {
  if (fs::is_directory(path)) {
    const RunManifest m = read_manifest(path);
    if (m.final_predictions.empty()) throw DataError("run " + m.run_id + " has no predictions");
    return read_predictions((path / m.final_predictions).string());
  }
  return read_predictions(path.string());
}

CompareResult compare(const fs::path& run_a, const fs::path& run_b, const Backend& judge, const PromptLibrary& lib,
                      const JudgeOptions& options) {
  const auto a = load_predictions_source(run_a);
  const auto b = load_predictions_source(run_b);
  std::map<std::string, const QueryFacets*> b_by_query;
  for (const QueryFacets& row : b) b_by_query.emplace(normalize_query(row.query), &row);
  std::set<std::string> a_keys;
  for (const QueryFacets& row : a) a_keys.insert(normalize_query(row.query));

  std::vector<std::string> only;
  for (const QueryFacets& row : a) {
    if (!b_by_query.contains(normalize_query(row.query))) only.push_back(row.query + " (only in A)");
  }
  for (const QueryFacets& row : b) {
    if (!a_keys.contains(normalize_query(row.query))) only.push_back(row.query + " (only in B)");
  }
  if (!only.empty()) throw DataError("query sets differ: " + join(only, ", "));

  CompareResult result;
  std::vector<JudgeItem> items;
  for (const QueryFacets& row : a) {
    const QueryFacets& other = *b_by_query.at(normalize_query(row.query));
    if (row.facets.empty() || other.facets.empty()) {
      spdlog::warn("compare: skipping '{}' (empty facet set)", row.query);
      continue;
    }
    items.push_back({row.query, {row.facets, FacetStage::kSmall}, {other.facets, FacetStage::kSmall}});
    result.queries.push_back(row.query);
  }
  result.verdicts = judge_batch(judge, lib, items, options);
  result.report = aggregate_verdicts(result.verdicts);
  result.jsonl = judge_results_to_jsonl(result.queries, run_a.string(), run_b.string(), result.verdicts);
  return result;
}

}  // namespace facetpipe
