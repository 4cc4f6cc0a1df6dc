// facetpipe command-line front end.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "facetpipe/error.hpp"
#include "facetpipe/pipeline.hpp"
#include "facetpipe/text.hpp"

namespace fs = std::filesystem;
using namespace facetpipe;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool mock = false;
  std::string log_level = "warn";
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig c = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  if (g.seed) {
    c.seed = *g.seed;
    c.edit_options.seed = *g.seed;
    c.judge_options.seed = *g.seed;
  }
  if (g.mock) force_mock(c);
  return c;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    write_file(out_path, text);
    spdlog::info("wrote {}", out_path);
  }
}

std::vector<QueryFacets> load_gold(const std::string& path) {
  if (ends_with(path, ".tsv")) return gold_from_corpus(load_corpus(path, Split::kTest));
  return read_predictions(path);
}

std::vector<std::string> test_queries(const ExperimentConfig& c, const std::string& corpus_path) {
  const std::string path = corpus_path.empty() ? c.test_path : corpus_path;
  if (path.empty()) throw ConfigError("no corpus given (use --corpus or [corpus].test)");
  const Corpus corpus = load_corpus(path, Split::kTest);
  std::vector<std::string> out;
  for (const QueryRecord* r : corpus.in_split(Split::kTest)) out.push_back(r->query);
  if (out.empty()) throw DataError(path + ": no test-split queries");
  return out;
}

std::string stats_text(const FacetSetStats& s) {
  return fmt::format(
      "avg_set_size          {:.2f}\n"
      "avg_facet_length      {:.2f}\n"
      "query_inclusion_pct   {:.2f}\n"
      "duplicate_proportion  {:.2f}\n",
      s.avg_set_size, s.avg_facet_length_chars, s.query_inclusion_pct, s.duplicate_proportion);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const BackendError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query facet generation pipeline: corpus, tasksets, generation, LLM editing, metrics."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "TOML experiment config");
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_flag("--mock", g.mock, "Replace every backend with the mock backend");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse a MIMICS-style TSV (plus optional SERP JSON) into corpus JSONL");
  std::string ingest_tsv, ingest_serp, ingest_out, ingest_split = "train";
  std::size_t ingest_snippets = 5;
  ingest->add_option("tsv", ingest_tsv, "Input TSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--split", ingest_split, "train|test")->capture_default_str();
  ingest->add_option("--serp", ingest_serp, "SERP JSON archive")->check(CLI::ExistingFile);
  ingest->add_option("--max-snippets", ingest_snippets)->capture_default_str();
  ingest->add_option("-o,--out", ingest_out, "Corpus JSONL (default stdout)");

  // build-tasks
  auto* build = app.add_subcommand("build-tasks", "Write the multi-task training set as JSONL");
  std::string build_corpus, build_out, build_mode = "Q";
  std::vector<std::string> build_tasks{"facet"};
  build->add_option("corpus", build_corpus, "Corpus JSONL or TSV")->required()->check(CLI::ExistingFile);
  build->add_option("--tasks", build_tasks, "facet,document,related")->delimiter(',')->capture_default_str();
  build->add_option("--mode", build_mode, "Q|QD")->capture_default_str();
  build->add_option("-o,--out", build_out, "Taskset JSONL (default stdout)");

  // generate
  auto* gen = app.add_subcommand("generate", "Small-model facets for every test query");
  std::string gen_corpus, gen_out;
  gen->add_option("--corpus", gen_corpus, "Test corpus (default [corpus].test)");
  gen->add_option("-o,--out", gen_out, "Predictions JSONL (default stdout)");

  // edit
  auto* edit = app.add_subcommand("edit", "LLM editing of small-model predictions");
  std::string edit_run, edit_pred, edit_out;
  edit->add_option("--run", edit_run, "Re-run the edit stage of a run directory and check its hash");
  edit->add_option("--predictions", edit_pred, "Small-model predictions JSONL");
  edit->add_option("-o,--out", edit_out, "Edited predictions JSONL (default stdout)");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score predictions against gold facets");
  std::string eval_pred, eval_gold, eval_out;
  eval->add_option("pred", eval_pred, "Predictions JSONL or run directory")->required();
  eval->add_option("gold", eval_gold, "Gold TSV or {query, facets} JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--out", eval_out, "Metrics JSON (default stdout)");

  // judge
  auto* judge = app.add_subcommand("judge", "Pairwise LLM judgement of two prediction sets");
  std::string judge_a, judge_b, judge_out;
  bool judge_shuffle = false;
  judge->add_option("a", judge_a, "Run directory or predictions JSONL (model A)")->required();
  judge->add_option("b", judge_b, "Run directory or predictions JSONL (model B)")->required();
  judge->add_flag("--randomize-order", judge_shuffle, "Seeded A/B swap per query");
  judge->add_option("-o,--out", judge_out, "Verdicts JSONL");

  // stats
  auto* stats = app.add_subcommand("stats", "Facet-set statistics of a predictions file");
  std::string stats_pred;
  stats->add_option("pred", stats_pred, "Predictions JSONL or run directory")->required();

  // report
  auto* rep = app.add_subcommand("report", "Metric table over run directories");
  std::vector<std::string> rep_runs;
  rep->add_option("runs", rep_runs, "Run directories")->required();

  // run
  auto* run = app.add_subcommand("run", "generate -> [edit] -> score -> [judge]");
  std::string run_id;
  run->add_option("--run-id", run_id, "Run directory name (default timestamp + config hash)");

  // verify
  auto* verify = app.add_subcommand("verify", "Re-hash a run directory against its manifest");
  std::string verify_dir;
  verify->add_option("run", verify_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("facetpipe"));
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (ingest->parsed()) {
      Corpus corpus = parse_mimics_tsv(ingest_tsv, parse_split(ingest_split));
      if (!ingest_serp.empty()) {
        SerpOptions opts;
        opts.max_snippets = ingest_snippets;
        corpus = attach_serp(corpus, ingest_serp, opts);
      }
      emit(corpus_to_jsonl(corpus), ingest_out);
      const CorpusSummary s = corpus_summary(corpus);
      std::cerr << fmt::format("{} records, {:.2f} facets/query, {:.2f} with snippets, {:.2f} with related\n",
                               s.record_count, s.mean_facets, s.snippet_fraction, s.related_fraction);
      std::cerr << manifest_to_json(corpus.manifest) << "\n";
    } else if (build->parsed()) {
      std::set<TaskKind> tasks;
      for (const std::string& t : build_tasks) tasks.insert(parse_task_kind(t));
      const Corpus corpus = load_corpus(build_corpus, Split::kTrain);
      emit(taskset_to_jsonl(build_taskset(corpus, tasks, parse_input_mode(build_mode))), build_out);
    } else if (gen->parsed()) {
      const ExperimentConfig c = resolve_config(g);
      const auto backend = make_backend(c.small_model);
      emit(predictions_to_jsonl(generate_small(*backend, test_queries(c, gen_corpus), c.small_max_new_tokens, c.seed)),
           gen_out);
    } else if (edit->parsed()) {
      if (!edit_run.empty()) {
        if (!rerun_edit_stage(edit_run)) {
          std::cerr << "edited predictions differ from the recorded hash\n";
          return 4;
        }
        std::cout << "edit stage reproduced\n";
        return 0;
      }
      if (edit_pred.empty()) throw ConfigError("edit needs --run or --predictions");
      ExperimentConfig c = resolve_config(g);
      if (c.train_path.empty()) throw ConfigError("edit needs [corpus].train for demonstrations");
      const Corpus train = load_corpus(c.train_path, Split::kTrain);
      const auto small_backend = make_backend(c.small_model);
      const auto llm = make_backend(c.llm);
      const PromptLibrary lib = load_prompt_library(c);
      std::vector<Demonstration> candidates;
      std::vector<std::string> demo_queries;
      for (const QueryRecord* r : demonstration_candidates(train, c.seed)) {
        candidates.push_back({r->query, {}, r->facets});
        demo_queries.push_back(r->query);
      }
      const auto demo_pred = generate_small(*small_backend, demo_queries, c.small_max_new_tokens, c.seed);
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        candidates[i].predicted = demo_pred[i].facets.empty() ? candidates[i].label : demo_pred[i].facets;
      }
      const auto small = read_predictions(edit_pred);
      std::vector<EditRequest> requests;
      for (const QueryFacets& row : small) {
        requests.push_back({row.query, {row.facets, FacetStage::kSmall}, pick_demonstrations(candidates, row.query)});
      }
      const auto results = edit_facets_batch(*llm, lib, requests, c.edit_options);
      std::vector<QueryFacets> edited;
      for (std::size_t i = 0; i < small.size(); ++i) edited.push_back({small[i].query, results[i].edited.facets});
      emit(predictions_to_jsonl(edited), edit_out);
    } else if (eval->parsed()) {
      const ExperimentConfig c = resolve_config(g);
      const auto sim = make_similarity(c.similarity, c.embedding_endpoint);
      const MetricReport r = score_predictions(load_predictions_source(eval_pred), load_gold(eval_gold), *sim);
      emit(report_to_json(r), eval_out);
    } else if (judge->parsed()) {
      ExperimentConfig c = resolve_config(g);
      if (judge_shuffle) c.judge_options.randomize_order = true;
      const auto backend = make_backend(c.judge);
      const CompareResult r = compare(judge_a, judge_b, *backend, load_prompt_library(c), c.judge_options);
      if (!judge_out.empty()) write_file(judge_out, r.jsonl);
      std::cout << format_win_report(r.report);
    } else if (stats->parsed()) {
      const auto rows = load_predictions_source(stats_pred);
      std::vector<std::vector<std::string>> sets;
      std::vector<std::string> queries;
      for (const QueryFacets& row : rows) {
        sets.push_back(row.facets);
        queries.push_back(row.query);
      }
      std::cout << stats_text(facet_set_stats(sets, queries));
    } else if (rep->parsed()) {
      std::vector<fs::path> dirs(rep_runs.begin(), rep_runs.end());
      std::cout << report(dirs);
    } else if (run->parsed()) {
      if (g.config_path.empty()) throw ConfigError("run needs --config");
      const ExperimentConfig c = resolve_config(g);
      validate(c);
      const Corpus corpus = load_experiment_corpus(c);
      const RunManifest m = run_experiment(c, corpus, RunOptions{run_id});
      std::cout << m.run_dir.string() << "\n";
      std::cout << report({m.run_dir});
      if (m.judge) std::cout << format_win_report(*m.judge);
    } else if (verify->parsed()) {
      const VerifyResult v = verify_run(verify_dir);
      for (const std::string& p : v.problems) std::cerr << p << "\n";
      std::cout << (v.ok ? "ok\n" : "mismatch\n");
      return v.ok ? 0 : 4;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
