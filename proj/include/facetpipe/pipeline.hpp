#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "facetpipe/backend.hpp"
#include "facetpipe/corpus.hpp"
#include "facetpipe/editing.hpp"
#include "facetpipe/facet_set.hpp"
#include "facetpipe/metrics.hpp"
#include "facetpipe/taskgen.hpp"

namespace facetpipe {

enum class EditingMode { kNone, kEdit, kZeroShot, kFewShot };

std::string_view to_string(EditingMode mode) noexcept;
EditingMode parse_editing_mode(std::string_view text);

struct ExperimentConfig {
  std::set<TaskKind> tasks{TaskKind::kFacet};
  InputMode input_mode = InputMode::kQ;
  EditingMode editing = EditingMode::kNone;
  std::uint64_t seed = 0;
  std::string run_root = "runs";

  std::string train_path;
  std::string test_path;
  std::string serp_path;
  SerpOptions serp;
  InputOptions input;

  BackendConfig small_model;
  BackendConfig llm;
  BackendConfig judge;
  bool judge_enabled = false;
  JudgeOptions judge_options;

  MarkerStyle marker_style = MarkerStyle::kUserAssistant;
  std::string templates_dir;  // empty: built-in templates
  EditOptions edit_options;
  int small_max_new_tokens = 128;

  std::string similarity = "char_trigram_cosine";
  std::string embedding_endpoint;
};

// Parses a TOML config. Relative paths resolve against the file's directory.
// FACETPIPE_BACKEND_URL / FACETPIPE_BACKEND_KEY apply to http backends.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir);

// Every backend becomes a mock (keeping any configured mock table).
void force_mock(ExperimentConfig& config);

// Throws ConfigError on inconsistent settings.
void validate(const ExperimentConfig& config);

// Canonical JSON of the config; its SHA-256 is the config hash.
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const std::string& json_text);
std::string config_hash(const ExperimentConfig& config);

// Train (+SERP) and test corpora merged into one.
Corpus load_experiment_corpus(const ExperimentConfig& config);

PromptLibrary load_prompt_library(const ExperimentConfig& config);

// Small-model facet generation for test queries: "[facet] q" prompts, Q mode,
// responses parsed with parse_target.
std::vector<QueryFacets> generate_small(const Backend& backend, const std::vector<std::string>& queries,
                                        int max_new_tokens, std::optional<std::uint64_t> seed);

// Up to `count` train records in seeded order.
std::vector<const QueryRecord*> demonstration_candidates(const Corpus& corpus, std::uint64_t seed,
                                                         std::size_t count = 3);

// The first two candidates whose query differs from `query`.
std::array<Demonstration, 2> pick_demonstrations(const std::vector<Demonstration>& candidates,
                                                 const std::string& query);

std::vector<QueryFacets> gold_from_corpus(const Corpus& corpus);

struct RunOptions {
  std::string run_id;  // empty: UTC timestamp + short config hash
};

struct StageEntry {
  std::string name;
  std::string status;  // "ok" or "failed"
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> artifacts;
  std::string error;
};

struct RunManifest {
  std::string run_id;
  std::filesystem::path run_dir;
  std::string config_hash;
  std::string corpus_hash;
  std::uint64_t seed = 0;
  std::vector<StageEntry> stages;
  std::string final_predictions;  // file name inside run_dir
  std::optional<MetricReport> metrics;
  std::optional<WinReport> judge;
};

// generate -> [edit] -> score -> [judge]. Writes runs/<run_id>/ and returns
// the manifest. On stage failure the manifest is still written, then the
// error is rethrown.
RunManifest run_experiment(const ExperimentConfig& config, const Corpus& corpus, const RunOptions& options = {});

RunManifest read_manifest(const std::filesystem::path& run_dir);

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> problems;
};

// Re-hashes every file in the run directory against the manifest.
VerifyResult verify_run(const std::filesystem::path& run_dir);

// Recomputes predictions.edited.jsonl from the manifest and the small-stage
// predictions. Returns true if the bytes match the recorded hash.
bool rerun_edit_stage(const std::filesystem::path& run_dir);

// Aligned table of the given runs' metrics, rows in argument order.
std::string report(const std::vector<std::filesystem::path>& run_dirs);

// A run directory (its final predictions) or a predictions JSONL file.
std::vector<QueryFacets> load_predictions_source(const std::filesystem::path& path);

struct CompareResult {
  WinReport report;
  std::vector<std::string> queries;
  std::vector<JudgeVerdict> verdicts;
  std::string jsonl;
};

CompareResult compare(const std::filesystem::path& run_a, const std::filesystem::path& run_b, const Backend& judge,
                      const PromptLibrary& lib, const JudgeOptions& options = {});

}  // namespace facetpipe
