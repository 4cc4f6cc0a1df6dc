#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "facetpipe/backend.hpp"
#include "facetpipe/error.hpp"
#include "facetpipe/facet_set.hpp"

namespace facetpipe {

class RenderError : public DataError {
 public:
  using DataError::DataError;
};

enum class TemplateId { kEdit, kZeroShot, kFewShot, kJudge };
enum class MarkerStyle { kUserAssistant, kInstructionResponse };

std::string_view to_string(TemplateId id) noexcept;
std::string_view to_string(MarkerStyle style) noexcept;
MarkerStyle parse_marker_style(std::string_view text);

struct QuotePair {
  std::string open = "'";
  std::string close = "'";
};

// Template bodies use {name} placeholders and {{ / }} escapes. They are stored
// in user_assistant style; marker lines are rewritten at render time.
struct PromptTemplate {
  TemplateId id = TemplateId::kEdit;
  std::string body;
};

struct RenderedPrompt {
  TemplateId id = TemplateId::kEdit;
  MarkerStyle style = MarkerStyle::kUserAssistant;
  std::string text;
};

// Substitute placeholders. A placeholder written as '{name}' gets its quotes
// replaced by `quotes`. Unbound placeholders raise RenderError.
std::string render_template(std::string_view body, const std::map<std::string, std::string>& values,
                            const QuotePair& quotes = {});

// Rewrites "### User:"/"### Assistant:" lines into the requested style (and
// back). Only exact marker lines change.
std::string apply_marker_style(std::string_view text, MarkerStyle style);
// Swaps every marker line to the other style; applying it twice is a no-op.
std::string toggle_marker_style(std::string_view text);

class PromptLibrary {
 public:
  static PromptLibrary builtin();
  // Reads <dir>/{edit,zero_shot,few_shot,judge}.txt; one trailing newline is
  // dropped from each file.
  static PromptLibrary from_directory(const std::string& dir);

  const PromptTemplate& get(TemplateId id) const;
  std::string hash(TemplateId id) const;

  QuotePair quotes;

 private:
  std::map<TemplateId, PromptTemplate> templates_;
};

struct Demonstration {
  std::string query;
  std::vector<std::string> predicted;
  std::vector<std::string> label;
};

struct EditRequest {
  std::string query;
  FacetSet predicted_facets;
  std::array<Demonstration, 2> demonstrations;
};

struct FewShotDemo {
  std::string query;
  std::vector<std::string> facets;
};

RenderedPrompt render_edit_prompt(const PromptLibrary& lib, const EditRequest& req, MarkerStyle style);
RenderedPrompt render_zero_shot_prompt(const PromptLibrary& lib, std::string_view query, MarkerStyle style);
RenderedPrompt render_few_shot_prompt(const PromptLibrary& lib, std::string_view query,
                                      const std::array<FewShotDemo, 2>& demos, MarkerStyle style);
RenderedPrompt render_judge_prompt(const PromptLibrary& lib, std::string_view query,
                                   const std::vector<std::string>& facets_a, const std::vector<std::string>& facets_b,
                                   MarkerStyle style = MarkerStyle::kUserAssistant);

struct FacetParse {
  FacetSet set;
  bool flagged = false;  // nothing usable in the response
};

inline constexpr std::size_t kDefaultMaxFacets = 10;

FacetParse parse_facet_response(std::string_view text, std::string_view query,
                                std::size_t max_facets = kDefaultMaxFacets);

struct EditOptions {
  MarkerStyle style = MarkerStyle::kUserAssistant;
  int max_new_tokens = 128;
  double temperature = 0.1;
  double top_p = 1.0;
  std::size_t max_facets = kDefaultMaxFacets;
  std::optional<std::uint64_t> seed;
};

struct EditResult {
  FacetSet edited;  // stage kEdited
  FacetSet input;   // the small-model facets that were edited
  std::string raw_text;
  bool flagged = false;
};

GenerationRequest make_request(const RenderedPrompt& prompt, int max_new_tokens, double temperature, double top_p,
                               std::optional<std::uint64_t> seed);

EditResult edit_facets(const Backend& backend, const PromptLibrary& lib, const EditRequest& req,
                       const EditOptions& options = {});
std::vector<EditResult> edit_facets_batch(const Backend& backend, const PromptLibrary& lib,
                                          const std::vector<EditRequest>& requests, const EditOptions& options = {});

// Zero-/few-shot generation without a small model. The resulting stage is
// kZeroShot / kFewShot.
std::vector<FacetParse> generate_zero_shot(const Backend& backend, const PromptLibrary& lib,
                                           const std::vector<std::string>& queries, const EditOptions& options = {});
std::vector<FacetParse> generate_few_shot(const Backend& backend, const PromptLibrary& lib,
                                          const std::vector<std::string>& queries,
                                          const std::vector<std::array<FewShotDemo, 2>>& demos,
                                          const EditOptions& options = {});

// ---- judge ----

enum class Verdict { kA, kB, kExcluded };

std::string_view to_string(Verdict v) noexcept;

struct JudgeVerdict {
  Verdict outcome = Verdict::kExcluded;
  std::string raw_text;
  bool swapped = false;  // A/B were presented in reverse order
};

// First alphanumeric token, case-insensitive: "a" -> A, "b" -> B, else excluded.
Verdict parse_verdict(std::string_view text);

struct JudgeOptions {
  int max_new_tokens = 32;
  double temperature = 0.1;
  double top_p = 1.0;
  bool randomize_order = false;
  std::uint64_t seed = 0;
};

JudgeVerdict judge_pair(const Backend& backend, const PromptLibrary& lib, std::string_view query,
                        const FacetSet& facets_a, const FacetSet& facets_b, const JudgeOptions& options = {});

struct JudgeItem {
  std::string query;
  FacetSet a;
  FacetSet b;
};

std::vector<JudgeVerdict> judge_batch(const Backend& backend, const PromptLibrary& lib,
                                      const std::vector<JudgeItem>& items, const JudgeOptions& options = {});

struct WinReport {
  std::size_t a_wins = 0;
  std::size_t b_wins = 0;
  std::size_t excluded = 0;
  std::size_t total = 0;
  double win_ratio_a = 0.0;   // percent of parsed verdicts
  double loss_ratio_a = 0.0;  // percent of parsed verdicts
};

WinReport aggregate_verdicts(const std::vector<JudgeVerdict>& verdicts);

std::string format_win_report(const WinReport& report);

// {query, model_a, model_b, outcome, raw_text} per line.
std::string judge_results_to_jsonl(const std::vector<std::string>& queries, const std::string& model_a,
                                   const std::string& model_b, const std::vector<JudgeVerdict>& verdicts);

}  // namespace facetpipe
