#include "facetpipe/editing.hpp"

#include <fmt/format.h>

#include <nlohmann/json.hpp>

#include "facetpipe/text.hpp"
#include "prompt_templates_embedded.hpp"

namespace facetpipe {

namespace {

constexpr std::string_view kUserMarker = "### User:";
constexpr std::string_view kAssistantMarker = "### Assistant:";
constexpr std::string_view kInstructionMarker = "### Instruction:";
constexpr std::string_view kResponseMarker = "### Response:";

bool is_placeholder_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; }

std::string drop_one_trailing_newline(std::string s) {
  if (ends_with(s, "\n")) s.pop_back();
  if (ends_with(s, "\r")) s.pop_back();
  return s;
}

std::string format_facet_list(const std::vector<std::string>& facets) {
  std::vector<std::string> cleaned;
  for (const std::string& f : facets) {
    std::string_view t = trim(f);
    if (!t.empty()) cleaned.emplace_back(t);
  }
  return join(cleaned, ", ");
}

// Apply `map` to every line that equals a marker; other bytes are untouched.
template <typename Map>
std::string rewrite_marker_lines(std::string_view text, Map map) {
  std::string out;
  out.reserve(text.size() + 16);
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    const bool last = end == std::string_view::npos;
    if (last) end = text.size();
    out += map(text.substr(start, end - start));
    if (last) break;
    out += '\n';
    start = end + 1;
  }
  return out;
}

bool ieq_prefix(std::string_view text, std::string_view prefix) {
  return text.size() >= prefix.size() && to_lower(text.substr(0, prefix.size())) == to_lower(prefix);
}

// Whitespace, backticks, quotes and periods around a response or a piece.
std::string_view strip_decorations(std::string_view s) {
  auto junk = [](char c) { return is_space(c) || c == '`' || c == '\'' || c == '"' || c == '.'; };
  while (!s.empty() && junk(s.front())) s.remove_prefix(1);
  while (!s.empty() && junk(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view to_string(TemplateId id) noexcept {
  switch (id) {
    case TemplateId::kEdit:
      return "edit";
    case TemplateId::kZeroShot:
      return "zero_shot";
    case TemplateId::kFewShot:
      return "few_shot";
    case TemplateId::kJudge:
      return "judge";
  }
  return "";
}

std::string_view to_string(MarkerStyle style) noexcept {
  return style == MarkerStyle::kUserAssistant ? "user_assistant" : "instruction_response";
}

MarkerStyle parse_marker_style(std::string_view text) {
  if (text == "user_assistant") return MarkerStyle::kUserAssistant;
  if (text == "instruction_response") return MarkerStyle::kInstructionResponse;
  throw ConfigError("unknown marker style '" + std::string(text) + "'");
}

std::string render_template(std::string_view body, const std::map<std::string, std::string>& values,
                            const QuotePair& quotes) {
  std::string out;
  out.reserve(body.size() + 128);
  std::size_t i = 0;
  while (i < body.size()) {
    const char c = body[i];
    if (c == '{' && i + 1 < body.size() && body[i + 1] == '{') {
      out += '{';
      i += 2;
      continue;
    }
    if (c == '}' && i + 1 < body.size() && body[i + 1] == '}') {
      out += '}';
      i += 2;
      continue;
    }
    if (c == '}') throw RenderError("stray '}' in template at offset " + std::to_string(i));
    if (c != '{') {
      out += c;
      ++i;
      continue;
    }
    const std::size_t close = body.find('}', i + 1);
    if (close == std::string_view::npos) throw RenderError("unterminated placeholder at offset " + std::to_string(i));
    const std::string name(body.substr(i + 1, close - i - 1));
    if (name.empty() || !std::all_of(name.begin(), name.end(), is_placeholder_char)) {
      throw RenderError("malformed placeholder '{" + name + "}'");
    }
    auto it = values.find(name);
    if (it == values.end()) throw RenderError("no value bound for placeholder '" + name + "'");
    const bool quoted = !out.empty() && out.back() == '\'' && close + 1 < body.size() && body[close + 1] == '\'';
    if (quoted) {
      out.pop_back();
      out += quotes.open;
      out += it->second;
      out += quotes.close;
      i = close + 2;
    } else {
      out += it->second;
      i = close + 1;
    }
  }
  return out;
}

std::string apply_marker_style(std::string_view text, MarkerStyle style) {
  return rewrite_marker_lines(text, [style](std::string_view line) -> std::string {
    const bool ua = style == MarkerStyle::kUserAssistant;
    if (line == kUserMarker || line == kInstructionMarker) return std::string(ua ? kUserMarker : kInstructionMarker);
    if (line == kAssistantMarker || line == kResponseMarker) {
      return std::string(ua ? kAssistantMarker : kResponseMarker);
    }
    return std::string(line);
  });
}

std::string toggle_marker_style(std::string_view text) {
  return rewrite_marker_lines(text, [](std::string_view line) -> std::string {
    if (line == kUserMarker) return std::string(kInstructionMarker);
    if (line == kInstructionMarker) return std::string(kUserMarker);
    if (line == kAssistantMarker) return std::string(kResponseMarker);
    if (line == kResponseMarker) return std::string(kAssistantMarker);
    return std::string(line);
  });
}

PromptLibrary PromptLibrary::builtin() {
  PromptLibrary lib;
  lib.templates_[TemplateId::kEdit] = {TemplateId::kEdit, drop_one_trailing_newline(std::string(embedded::kEdit))};
  lib.templates_[TemplateId::kZeroShot] = {TemplateId::kZeroShot,
                                           drop_one_trailing_newline(std::string(embedded::kZeroShot))};
  lib.templates_[TemplateId::kFewShot] = {TemplateId::kFewShot,
                                          drop_one_trailing_newline(std::string(embedded::kFewShot))};
  lib.templates_[TemplateId::kJudge] = {TemplateId::kJudge, drop_one_trailing_newline(std::string(embedded::kJudge))};
  return lib;
}

PromptLibrary PromptLibrary::from_directory(const std::string& dir) {
  PromptLibrary lib;
  for (TemplateId id : {TemplateId::kEdit, TemplateId::kZeroShot, TemplateId::kFewShot, TemplateId::kJudge}) {
    const std::string path = dir + "/" + std::string(to_string(id)) + ".txt";
    lib.templates_[id] = {id, drop_one_trailing_newline(read_file(path))};
  }
  return lib;
}

const PromptTemplate& PromptLibrary::get(TemplateId id) const { return templates_.at(id); }

std::string PromptLibrary::hash(TemplateId id) const { return sha256_hex(get(id).body); }

RenderedPrompt render_edit_prompt(const PromptLibrary& lib, const EditRequest& req, MarkerStyle style) {
  std::map<std::string, std::string> values;
  auto bind = [&values](const std::string& name, std::string value) {
    if (trim(value).empty()) throw RenderError("missing value for placeholder '" + name + "'");
    values[name] = std::move(value);
  };
  bind("query", std::string(trim(req.query)));
  values["predicted_facets"] = format_facet_list(req.predicted_facets.facets);
  const std::string input_key = normalize_query(req.query);
  for (std::size_t k = 0; k < req.demonstrations.size(); ++k) {
    const Demonstration& d = req.demonstrations[k];
    const std::string n = std::to_string(k + 1);
    if (!trim(d.query).empty() && normalize_query(d.query) == input_key) {
      throw ContractViolation("demonstration " + n + " uses the input query '" + req.query + "'");
    }
    bind("demo_query_" + n, std::string(trim(d.query)));
    bind("demo_predicted_" + n, format_facet_list(d.predicted));
    bind("demo_label_" + n, format_facet_list(d.label));
  }
  RenderedPrompt p;
  p.id = TemplateId::kEdit;
  p.style = style;
  p.text = apply_marker_style(render_template(lib.get(TemplateId::kEdit).body, values, lib.quotes), style);
  return p;
}

RenderedPrompt render_zero_shot_prompt(const PromptLibrary& lib, std::string_view query, MarkerStyle style) {
  const std::string_view q = trim(query);
  if (q.empty()) throw RenderError("missing value for placeholder 'query'");
  RenderedPrompt p;
  p.id = TemplateId::kZeroShot;
  p.style = style;
  p.text = apply_marker_style(
      render_template(lib.get(TemplateId::kZeroShot).body, {{"query", std::string(q)}}, lib.quotes), style);
  return p;
}

RenderedPrompt render_few_shot_prompt(const PromptLibrary& lib, std::string_view query,
                                      const std::array<FewShotDemo, 2>& demos, MarkerStyle style) {
  const std::string_view q = trim(query);
  if (q.empty()) throw RenderError("missing value for placeholder 'query'");
  std::map<std::string, std::string> values{{"query", std::string(q)}};
  for (std::size_t k = 0; k < demos.size(); ++k) {
    const std::string n = std::to_string(k + 1);
    const std::string dq(trim(demos[k].query));
    if (dq.empty()) throw RenderError("missing value for placeholder 'demo_query_" + n + "'");
    if (normalize_query(dq) == normalize_query(q)) {
      throw ContractViolation("demonstration " + n + " uses the input query '" + std::string(q) + "'");
    }
    const std::string facets = format_facet_list(demos[k].facets);
    if (facets.empty()) throw RenderError("missing value for placeholder 'demo_facets_" + n + "'");
    values["demo_query_" + n] = dq;
    values["demo_facets_" + n] = facets;
  }
  RenderedPrompt p;
  p.id = TemplateId::kFewShot;
  p.style = style;
  p.text = apply_marker_style(render_template(lib.get(TemplateId::kFewShot).body, values, lib.quotes), style);
  return p;
}

RenderedPrompt render_judge_prompt(const PromptLibrary& lib, std::string_view query,
                                   const std::vector<std::string>& facets_a, const std::vector<std::string>& facets_b,
                                   MarkerStyle style) {
  const std::string_view q = trim(query);
  if (q.empty()) throw RenderError("missing value for placeholder 'query'");
  const std::string a = format_facet_list(facets_a);
  const std::string b = format_facet_list(facets_b);
  if (a.empty()) throw RenderError("missing value for placeholder 'facets_a'");
  if (b.empty()) throw RenderError("missing value for placeholder 'facets_b'");
  RenderedPrompt p;
  p.id = TemplateId::kJudge;
  p.style = style;
  p.text = apply_marker_style(
      render_template(lib.get(TemplateId::kJudge).body,
                      {{"query", std::string(q)}, {"facets_a", a}, {"facets_b", b}}, lib.quotes),
      style);
  return p;
}

FacetParse parse_facet_response(std::string_view text, std::string_view query, std::size_t max_facets) {
  FacetParse result;
  std::string_view body = strip_decorations(text);

  std::size_t cut = body.size();
  for (std::string_view stop : {std::string_view("###"), std::string_view("\n\n")}) {
    const std::size_t pos = body.find(stop);
    if (pos != std::string_view::npos) cut = std::min(cut, pos);
  }
  body = strip_decorations(body.substr(0, cut));

  const std::string q(trim(query));
  for (const std::string& prefix : {"The correct facets for '" + q + "' are", "The facets for '" + q + "' are"}) {
    if (ieq_prefix(body, prefix)) {
      body = strip_decorations(body.substr(prefix.size()));
      break;
    }
  }

  for (const std::string& piece : split_exact(body, ",")) {
    std::string_view p = strip_decorations(piece);
    if (p.empty()) continue;
    if (result.set.facets.size() == max_facets) break;
    result.set.facets.emplace_back(p);
  }
  result.flagged = result.set.facets.empty();
  return result;
}

GenerationRequest make_request(const RenderedPrompt& prompt, int max_new_tokens, double temperature, double top_p,
                               std::optional<std::uint64_t> seed) {
  GenerationRequest r;
  r.prompt = prompt.text;
  r.max_new_tokens = max_new_tokens;
  r.temperature = temperature;
  r.top_p = top_p;
  r.seed = seed;
  return r;
}

EditResult edit_facets(const Backend& backend, const PromptLibrary& lib, const EditRequest& req,
                       const EditOptions& options) {
  return edit_facets_batch(backend, lib, {req}, options).front();
}

namespace {

std::vector<GenerationResponse> run_prompts(const Backend& backend, const std::vector<GenerationRequest>& requests,
                                            const std::vector<std::string>& queries) {
  try {
    return generate_batch(backend, requests);
  } catch (const BatchError& e) {
    throw e.with_query(queries.at(e.index()));
  }
}

}  // namespace

std::vector<EditResult> edit_facets_batch(const Backend& backend, const PromptLibrary& lib,
                                          const std::vector<EditRequest>& requests, const EditOptions& options) {
  std::vector<GenerationRequest> gen;
  std::vector<std::string> queries;
  for (const EditRequest& req : requests) {
    gen.push_back(make_request(render_edit_prompt(lib, req, options.style), options.max_new_tokens,
                               options.temperature, options.top_p, options.seed));
    queries.push_back(req.query);
  }
  const std::vector<GenerationResponse> responses = run_prompts(backend, gen, queries);
  std::vector<EditResult> out;
  out.reserve(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    FacetParse parsed = parse_facet_response(responses[i].text, requests[i].query, options.max_facets);
    EditResult r;
    r.edited = std::move(parsed.set);
    r.edited.stage = FacetStage::kEdited;
    r.input = requests[i].predicted_facets;
    r.raw_text = responses[i].text;
    r.flagged = parsed.flagged;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<FacetParse> generate_zero_shot(const Backend& backend, const PromptLibrary& lib,
                                           const std::vector<std::string>& queries, const EditOptions& options) {
  std::vector<GenerationRequest> gen;
  for (const std::string& q : queries) {
    gen.push_back(make_request(render_zero_shot_prompt(lib, q, options.style), options.max_new_tokens,
                               options.temperature, options.top_p, options.seed));
  }
  const auto responses = run_prompts(backend, gen, queries);
  std::vector<FacetParse> out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out.push_back(parse_facet_response(responses[i].text, queries[i], options.max_facets));
    out.back().set.stage = FacetStage::kZeroShot;
  }
  return out;
}

std::vector<FacetParse> generate_few_shot(const Backend& backend, const PromptLibrary& lib,
                                          const std::vector<std::string>& queries,
                                          const std::vector<std::array<FewShotDemo, 2>>& demos,
                                          const EditOptions& options) {
  if (demos.size() != queries.size()) throw ContractViolation("generate_few_shot: one demo pair per query required");
  std::vector<GenerationRequest> gen;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    gen.push_back(make_request(render_few_shot_prompt(lib, queries[i], demos[i], options.style),
                               options.max_new_tokens, options.temperature, options.top_p, options.seed));
  }
  const auto responses = run_prompts(backend, gen, queries);
  std::vector<FacetParse> out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out.push_back(parse_facet_response(responses[i].text, queries[i], options.max_facets));
    out.back().set.stage = FacetStage::kFewShot;
  }
  return out;
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::kA:
      return "A";
    case Verdict::kB:
      return "B";
    case Verdict::kExcluded:
      return "excluded";
  }
  return "";
}

Verdict parse_verdict(std::string_view text) {
  std::string_view t = trim(text);
  std::size_t b = 0;
  while (b < t.size() && !is_alnum(t[b])) ++b;
  std::size_t e = b;
  while (e < t.size() && is_alnum(t[e])) ++e;
  const std::string token = to_lower(t.substr(b, e - b));
  if (token == "a") return Verdict::kA;
  if (token == "b") return Verdict::kB;
  return Verdict::kExcluded;
}

namespace {

bool presented_swapped(const JudgeOptions& options, std::string_view query) {
  if (!options.randomize_order) return false;
  SplitMix64 rng(options.seed ^ fnv1a(query));
  return (rng.next() & 1U) != 0;
}

Verdict unswap(Verdict v, bool swapped) {
  if (!swapped || v == Verdict::kExcluded) return v;
  return v == Verdict::kA ? Verdict::kB : Verdict::kA;
}

}  // namespace

std::vector<JudgeVerdict> judge_batch(const Backend& backend, const PromptLibrary& lib,
                                      const std::vector<JudgeItem>& items, const JudgeOptions& options) {
  std::vector<GenerationRequest> gen;
  std::vector<std::string> queries;
  std::vector<bool> swapped;
  for (const JudgeItem& item : items) {
    if (item.a.facets.empty() || item.b.facets.empty()) {
      throw ContractViolation("judge: empty facet set for query '" + item.query + "'");
    }
    const bool swap = presented_swapped(options, item.query);
    const auto& first = swap ? item.b.facets : item.a.facets;
    const auto& second = swap ? item.a.facets : item.b.facets;
    gen.push_back(make_request(render_judge_prompt(lib, item.query, first, second), options.max_new_tokens,
                               options.temperature, options.top_p, std::nullopt));
    queries.push_back(item.query);
    swapped.push_back(swap);
  }
  const auto responses = run_prompts(backend, gen, queries);
  std::vector<JudgeVerdict> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    JudgeVerdict v;
    v.raw_text = responses[i].text;
    v.swapped = swapped[i];
    v.outcome = unswap(parse_verdict(v.raw_text), v.swapped);
    out.push_back(std::move(v));
  }
  return out;
}

JudgeVerdict judge_pair(const Backend& backend, const PromptLibrary& lib, std::string_view query,
                        const FacetSet& facets_a, const FacetSet& facets_b, const JudgeOptions& options) {
  return judge_batch(backend, lib, {JudgeItem{std::string(query), facets_a, facets_b}}, options).front();
}

WinReport aggregate_verdicts(const std::vector<JudgeVerdict>& verdicts) {
  WinReport r;
  for (const JudgeVerdict& v : verdicts) {
    switch (v.outcome) {
      case Verdict::kA:
        ++r.a_wins;
        break;
      case Verdict::kB:
        ++r.b_wins;
        break;
      case Verdict::kExcluded:
        ++r.excluded;
        break;
    }
  }
  r.total = verdicts.size();
  const std::size_t parsed = r.a_wins + r.b_wins;
  if (parsed == 0) throw DataError("no parsed verdicts");
  r.win_ratio_a = 100.0 * static_cast<double>(r.a_wins) / static_cast<double>(parsed);
  r.loss_ratio_a = 100.0 * static_cast<double>(r.b_wins) / static_cast<double>(parsed);
  return r;
}

std::string format_win_report(const WinReport& r) {
  return fmt::format("win {:.2f}% | loss {:.2f}% | excluded {} (A={} B={} total={})", r.win_ratio_a,
                     r.loss_ratio_a, r.excluded, r.a_wins, r.b_wins, r.total);
}

std::string judge_results_to_jsonl(const std::vector<std::string>& queries, const std::string& model_a,
                                   const std::string& model_b, const std::vector<JudgeVerdict>& verdicts) {
  if (queries.size() != verdicts.size()) throw ContractViolation("judge results: queries/verdicts length mismatch");
  std::string out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    nlohmann::ordered_json j;
    j["query"] = queries[i];
    j["model_a"] = model_a;
    j["model_b"] = model_b;
    j["outcome"] = to_string(verdicts[i].outcome);
    j["raw_text"] = verdicts[i].raw_text;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace facetpipe
