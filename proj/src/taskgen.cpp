#include "facetpipe/taskgen.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "facetpipe/error.hpp"
#include "facetpipe/text.hpp"

namespace facetpipe {

std::string_view special_token(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::kFacet:
      return "[facet]";
    case TaskKind::kDocument:
      return "[document]";
    case TaskKind::kRelated:
      return "[related]";
  }
  return "";
}

std::string_view to_string(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::kFacet:
      return "facet";
    case TaskKind::kDocument:
      return "document";
    case TaskKind::kRelated:
      return "related";
  }
  return "";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "facet") return TaskKind::kFacet;
  if (text == "document") return TaskKind::kDocument;
  if (text == "related") return TaskKind::kRelated;
  throw ConfigError("unknown task '" + std::string(text) + "'");
}

std::string_view to_string(InputMode mode) noexcept { return mode == InputMode::kQ ? "Q" : "QD"; }

InputMode parse_input_mode(std::string_view text) {
  if (text == "Q") return InputMode::kQ;
  if (text == "QD") return InputMode::kQD;
  throw ConfigError("unknown input mode '" + std::string(text) + "' (expected Q or QD)");
}

std::string build_input(TaskKind task, std::string_view query, InputMode mode,
                        const std::vector<std::string>& snippets, Split provenance,
                        const InputOptions& options) {
  const std::string_view q = trim(query);
  if (q.empty()) throw ContractViolation("build_input: empty query");
  if (mode == InputMode::kQD && provenance == Split::kTest) {
    throw ContractViolation("build_input: snippets of test-split query '" + std::string(q) +
                            "' cannot be used as input");
  }
  std::string out(special_token(task));
  out += ' ';
  out += q;
  if (mode == InputMode::kQD) {
    const std::size_t j = std::min(snippets.size(), options.max_snippets);
    for (std::size_t i = 0; i < j; ++i) {
      out += options.separator;
      out += snippets[i];
    }
  }
  return out;
}

std::string build_target(const std::vector<std::string>& items) {
  if (items.empty()) throw DataError("no target items");
  std::vector<std::string> cleaned;
  cleaned.reserve(items.size());
  for (const std::string& item : items) {
    std::string_view t = trim(item);
    if (t.empty()) throw DataError("empty target item");
    if (t.find(kTargetSeparator) != std::string_view::npos) {
      spdlog::warn("target item contains the separator and will not round-trip: \"{}\"", t);
    }
    cleaned.emplace_back(t);
  }
  return join(cleaned, kTargetSeparator);
}

std::vector<std::string> parse_target(std::string_view text) {
  std::string_view t = trim(text);
  while (!t.empty() && (t.back() == ',' || is_space(t.back()))) t.remove_suffix(1);
  std::vector<std::string> out;
  if (t.empty()) return out;
  for (const std::string& piece : split_exact(t, kTargetSeparator)) {
    std::string_view p = trim(piece);
    if (!p.empty()) out.emplace_back(p);
  }
  return out;
}

std::vector<TaskExample> build_taskset(const Corpus& corpus, const std::set<TaskKind>& tasks, InputMode mode,
                                       const InputOptions& options) {
  if (tasks.empty()) throw ConfigError("build_taskset: no tasks requested");
  std::vector<TaskExample> out;
  for (const QueryRecord& rec : corpus.records) {
    for (TaskKind task : tasks) {  // std::set iterates in enum order
      std::vector<std::string> items;
      switch (task) {
        case TaskKind::kFacet:
          items = rec.facets;
          break;
        case TaskKind::kDocument:
          for (const std::string& s : rec.snippets) {
            if (items.size() == options.max_snippets) break;
            if (!trim(s).empty()) items.push_back(s);
          }
          break;
        case TaskKind::kRelated:
          for (const std::string& s : rec.related_queries) {
            if (!trim(s).empty()) items.push_back(s);
          }
          break;
      }
      if (items.empty()) continue;
      TaskExample ex;
      ex.task = task;
      ex.query = rec.query;
      ex.input_text = build_input(task, rec.query, mode, rec.snippets, rec.split, options);
      ex.target_text = build_target(items);
      out.push_back(std::move(ex));
    }
  }
  if (out.empty()) throw DataError("empty taskset");
  return out;
}

std::string taskset_to_jsonl(const std::vector<TaskExample>& examples) {
  std::string out;
  for (const TaskExample& ex : examples) {
    nlohmann::ordered_json j;
    j["task"] = to_string(ex.task);
    j["input"] = ex.input_text;
    j["target"] = ex.target_text;
    j["query"] = ex.query;
    out += j.dump();
    out += '\n';
  }
  return out;
}

CrossEntropyResult cross_entropy(const LossInput& loss_in) {
  const auto& ids = loss_in.target_token_ids;
  const auto& dists = loss_in.predicted_distributions;
  if (ids.size() != dists.size()) {
    throw ContractViolation("cross_entropy: " + std::to_string(ids.size()) + " targets but " +
                            std::to_string(dists.size()) + " distributions");
  }
  if (ids.empty()) throw ContractViolation("cross_entropy: empty target sequence");

  CrossEntropyResult result;
  double total = 0.0;
  for (std::size_t pos = 0; pos < ids.size(); ++pos) {
    const std::vector<double>& dist = dists[pos];
    double mass = 0.0;
    for (double p : dist) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ContractViolation("cross_entropy: probability outside [0,1] at position " + std::to_string(pos));
      }
      mass += p;
    }
    if (std::abs(mass - 1.0) > 1e-9) {
      throw ContractViolation("cross_entropy: distribution at position " + std::to_string(pos) +
                              " does not sum to 1");
    }
    const int id = ids[pos];
    if (id < 0 || static_cast<std::size_t>(id) >= dist.size()) {
      throw ContractViolation("cross_entropy: target id out of vocabulary at position " + std::to_string(pos));
    }
    double p = dist[static_cast<std::size_t>(id)];
    if (p < kLossEpsilon) {
      p = kLossEpsilon;
      result.clamped = true;
      result.clamped_positions.push_back(pos);
    }
    total += -std::log(p);
  }
  result.value = total / static_cast<double>(ids.size());
  return result;
}

double task_loss(std::span<const LossInput> examples) {
  if (examples.empty()) throw ContractViolation("task_loss: no examples");
  double total = 0.0;
  for (const LossInput& ex : examples) total += cross_entropy(ex).value;
  return total / static_cast<double>(examples.size());
}

double multi_task_loss(const std::map<TaskKind, double>& per_task_means) {
  double total = 0.0;
  for (const auto& [kind, mean] : per_task_means) total += mean;
  return total;
}

double multi_task_loss(const std::map<TaskKind, std::vector<LossInput>>& batch) {
  std::map<TaskKind, double> means;
  for (const auto& [kind, examples] : batch) means[kind] = task_loss(examples);
  return multi_task_loss(means);
}

}  // namespace facetpipe
