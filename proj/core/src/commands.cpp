// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>

#include "babylab/benchmark.hpp"
#include "babylab/checkpoint.hpp"
#include "babylab/corpus.hpp"
#include "babylab/error.hpp"
#include "babylab/model.hpp"
#include "babylab/report.hpp"
#include "babylab/scorers.hpp"
#include "babylab/scoring.hpp"
#include "babylab/tokenizer.hpp"
#include "babylab/trainer.hpp"

#ifndef BABYLAB_VERSION
#define BABYLAB_VERSION "0.0.0"
#endif

namespace babylab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::vector<std::string> all_utterances(const std::vector<std::vector<std::string>>& documents) {
  std::vector<std::string> lines;
  for (const auto& doc : documents) lines.insert(lines.end(), doc.begin(), doc.end());
  return lines;
}

std::size_t corpus_words(const std::vector<std::vector<std::string>>& documents) {
  std::size_t words = 0;
  for (const auto& doc : documents) {
    for (const auto& line : doc) words += count_words(line);
  }
  return words;
}

Tokenizer train_tokenizer_or_fail(const std::vector<std::string>& lines, std::size_t vocab_size) {
  try {
    return Tokenizer::train(lines, vocab_size);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

std::string_view tool_version() { return BABYLAB_VERSION; }

void cmd_tokenize(const TokenizeArgs& args) {
  const auto manifest = CorpusManifest::load(args.corpus);
  const auto tokenizer = train_tokenizer_or_fail(all_utterances(load_documents(manifest)), args.vocab_size);
  write_text_atomic(args.out, tokenizer.to_json().dump(2) + "\n");
}

json cmd_train(const TrainArgs& args) {
  const ModelConfig model_config = ModelConfig::from_json(read_json(args.model_config));
  TrainingConfig config = args.training_config.empty() ? TrainingConfig::restricted()
                                                       : TrainingConfig::from_json(read_json(args.training_config));
  if (args.seed) config.seed = *args.seed;
  config.validate();

  const auto manifest = CorpusManifest::load(args.corpus);
  const auto documents = load_documents(manifest);
  const std::size_t words_per_epoch = corpus_words(documents);

  ensure_directory(args.out);
  Tokenizer tokenizer = args.tokenizer.empty()
                            ? train_tokenizer_or_fail(all_utterances(documents), model_config.vocab_size)
                            : Tokenizer::load(args.tokenizer);
  if (tokenizer.vocab_size() != model_config.vocab_size) {
    throw ConfigError("vocab_size: tokenizer has " + std::to_string(tokenizer.vocab_size()) +
                      " entries, model config says " + std::to_string(model_config.vocab_size));
  }
  const json tokenizer_json = tokenizer.to_json();
  write_text_atomic(args.out / "tokenizer.json", tokenizer_json.dump(2) + "\n");

  const auto blocks = build_stream(documents, tokenizer, args.block_length.value_or(model_config.max_length),
                                   model_config.max_length, config.seed);

  TransformerModel model = TransformerModel::build(model_config, config.seed);
  TrainOptions options;
  if (args.resume) {
    Checkpoint last = load_checkpoint(args.out / "last.ckpt");
    if (!(last.model.config() == model_config)) throw ConfigError("resume: checkpoint config differs from --config");
    model = std::move(last.model);
    TrainerState state;
    const auto& trainer = last.metadata.at("trainer");
    state.epochs_completed = trainer.at("epochs_completed").get<std::size_t>();
    state.optimizer_steps = trainer.at("optimizer_steps").get<std::size_t>();
    state.log = TrainingLog::from_json(trainer.at("log"));
    for (auto& [name, value] : last.extra) {
      if (name.starts_with("optim/")) state.optimizer.emplace(name.substr(6), std::move(value));
    }
    options.resume = std::move(state);
  }

  options.on_epoch_end = [&](const EpochEvent& event) {
    json metadata{{"name", "epoch-" + std::to_string(event.epoch)},
                  {"tokenizer", tokenizer_json},
                  {"training_words", words_per_epoch * event.epoch},
                  {"training_config", config.to_json()},
                  {"trainer",
                   {{"epochs_completed", event.epoch},
                    {"optimizer_steps", event.optimizer->steps_taken()},
                    {"log", event.log->to_json()}}}};
    std::map<std::string, Matrix<float>> extra;
    for (auto& [name, value] : event.optimizer->state()) extra.emplace("optim/" + name, std::move(value));
    save_checkpoint(args.out / ("epoch-" + std::to_string(event.epoch) + ".ckpt"), *event.model, metadata, extra);
    save_checkpoint(args.out / "last.ckpt", *event.model, metadata, extra);
    if (event.is_best) save_checkpoint(args.out / "best.ckpt", *event.model, metadata);
  };

  const TrainingLog log = train(model, blocks, config, options);
  json doc = log.to_json();
  write_text_atomic(args.out / "training_log.json", doc.dump(2) + "\n");
  return doc;
}

json cmd_eval(const EvalArgs& args) {
  RunManifest manifest;
  manifest.command = "eval";
  manifest.started_at = utc_timestamp();
  manifest.tool_version = std::string(tool_version());
  manifest.seed = args.seed;
  manifest.artifacts["scorer"] = args.scorer;
  manifest.artifacts["benchmark"] = args.benchmark.string();
  if (!args.norms.empty()) manifest.artifacts["norms"] = args.norms.string();
  if (!args.corpus.empty()) manifest.configs["corpus"] = args.corpus.string();
  if (!args.overrides.empty()) manifest.artifacts["overrides"] = args.overrides.string();

  const auto items = load_benchmark(args.benchmark);
  std::optional<NormSet> norms;
  if (!args.norms.empty()) norms = NormSet::load(args.norms);
  std::vector<CompletionOverride> overrides;
  if (!args.overrides.empty()) overrides = load_overrides(args.overrides);

  std::optional<TrainingExposure> exposure;
  if (!args.corpus.empty()) {
    const auto corpus = CorpusManifest::load(args.corpus);
    exposure = TrainingExposure{static_cast<double>(corpus.declared_total() * corpus.epochs),
                                corpus.words_per_year, "manifest"};
  }

  const auto scorer = make_scorer(args.scorer);
  if (const auto* model = dynamic_cast<const ModelScorer*>(scorer.get());
      model != nullptr && !exposure && model->training_words()) {
    exposure = TrainingExposure{static_cast<double>(*model->training_words()), 10'000'000.0, "checkpoint"};
  }
  if (args.training_words) exposure = TrainingExposure{*args.training_words, 10'000'000.0, "flag"};

  CompletionOptions completion;
  completion.beams = args.beams;
  BenchmarkRun run = run_benchmark(*scorer, items, completion, args.workers);
  // Per-item failures are part of the report; a scorer that answered nothing
  // or died along the way is not.
  const bool all_errored = std::all_of(run.results.begin(), run.results.end(),
                                       [](const TaskResult& r) { return r.errored(); });
  if (!scorer->healthy() || all_errored) {
    std::string reason = run.results.empty() ? "no results" : run.results.front().error.value_or("");
    throw ScorerError(scorer->name() + ": scorer unreachable (" + reason + ")");
  }
  if (!overrides.empty()) {
    apply_overrides(run.results, overrides);
    run = summarize(std::move(run.results));
  }
  manifest.finished_at = utc_timestamp();

  ReportInputs inputs;
  inputs.manifest = manifest;
  inputs.scorer = scorer->name();
  inputs.run = &run;
  inputs.norms = norms ? &*norms : nullptr;
  inputs.exposure = exposure;
  const json report = build_report(inputs, args.canonical);
  const std::string json_text = report.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
  const std::string csv_text = render_csv(report);
  const std::string table_text = render_text(report);

  ensure_directory(args.out);
  write_text_atomic(args.out / "report.json", json_text);
  write_text_atomic(args.out / "report.csv", csv_text);
  write_text_atomic(args.out / "report.txt", table_text);
  return report;
}

std::string cmd_report(const ReportArgs& args) {
  if (args.reports.empty()) throw ConfigError("report: at least one report file is required");
  std::vector<json> reports;
  for (const auto& path : args.reports) reports.push_back(load_report(path));
  const json comparison = compare_reports(reports);
  const std::string text = render_comparison_text(comparison);
  if (!args.out.empty()) {
    const std::string csv = render_comparison_csv(comparison);
    ensure_directory(args.out);
    write_text_atomic(args.out / "comparison.csv", csv);
    write_text_atomic(args.out / "comparison.txt", text);
  }
  return text;
}

json cmd_budget(const fs::path& corpus) { return validate_budget(CorpusManifest::load(corpus)).to_json(); }

int run_command(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Io);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace babylab
