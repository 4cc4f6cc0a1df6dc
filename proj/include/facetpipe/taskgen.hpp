#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "facetpipe/corpus.hpp"

namespace facetpipe {

// Ordering of the enumerators is the taskset ordering (facet < document < related).
enum class TaskKind { kFacet = 0, kDocument = 1, kRelated = 2 };

// "[facet]", "[document]" or "[related]".
std::string_view special_token(TaskKind kind) noexcept;
std::string_view to_string(TaskKind kind) noexcept;
TaskKind parse_task_kind(std::string_view text);

enum class InputMode { kQ, kQD };

std::string_view to_string(InputMode mode) noexcept;
InputMode parse_input_mode(std::string_view text);

struct InputOptions {
  std::string separator = " </s> ";
  std::size_t max_snippets = 5;
};

inline constexpr std::string_view kTargetSeparator = ", ";

struct TaskExample {
  TaskKind task = TaskKind::kFacet;
  std::string input_text;
  std::string target_text;
  std::string query;

  bool operator==(const TaskExample&) const = default;
};

// Q mode: "[task] query". QD mode appends up to max_snippets snippets, each
// preceded by the separator. QD with test-split provenance is rejected.
std::string build_input(TaskKind task, std::string_view query, InputMode mode,
                        const std::vector<std::string>& snippets, Split provenance,
                        const InputOptions& options = {});

// Joins items with ", ". Items are trimmed; an item containing ", " is kept
// verbatim (with a warning) and will not survive parse_target.
std::string build_target(const std::vector<std::string>& items);

// Inverse of build_target: trims, tolerates trailing commas, splits on ", ",
// trims pieces and drops empty ones.
std::vector<std::string> parse_target(std::string_view text);

std::vector<TaskExample> build_taskset(const Corpus& corpus, const std::set<TaskKind>& tasks, InputMode mode,
                                       const InputOptions& options = {});

std::string taskset_to_jsonl(const std::vector<TaskExample>& examples);

// ---- cross-entropy contract ----

struct LossInput {
  std::vector<int> target_token_ids;
  std::vector<std::vector<double>> predicted_distributions;
};

struct CrossEntropyResult {
  double value = 0.0;
  bool clamped = false;
  std::vector<std::size_t> clamped_positions;
};

inline constexpr double kLossEpsilon = 1e-12;

// Mean over positions of -ln p(target). A zero probability is clamped to
// kLossEpsilon and reported in clamped_positions.
CrossEntropyResult cross_entropy(const LossInput& loss_in);

// Mean per-example cross-entropy over one task's examples.
double task_loss(std::span<const LossInput> examples);

// Sum of per-task means.
double multi_task_loss(const std::map<TaskKind, double>& per_task_means);
double multi_task_loss(const std::map<TaskKind, std::vector<LossInput>>& batch);

}  // namespace facetpipe
