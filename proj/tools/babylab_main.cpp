// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "babylab/commands.hpp"
#include "babylab/error.hpp"
#include "babylab/model.hpp"
#include "babylab/protocol.hpp"
#include "babylab/scorers.hpp"

namespace {

std::size_t default_workers() {
  if (const char* env = std::getenv("BABYLAB_WORKERS")) {
    try {
      const auto n = std::stoul(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring BABYLAB_WORKERS=" << env << "\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace babylab;
  CLI::App app{"Developmentally-scaled language model training and evaluation"};
  app.set_version_flag("--version", std::string(tool_version()));
  app.require_subcommand(1);

  TokenizeArgs tok;
  auto* tokenize = app.add_subcommand("tokenize", "Train a byte-level BPE tokenizer on a corpus");
  tokenize->add_option("--corpus", tok.corpus, "Corpus manifest (JSON)")->required();
  tokenize->add_option("--vocab-size", tok.vocab_size, "Vocabulary size including specials")->required();
  tokenize->add_option("--out", tok.out, "Tokenizer JSON to write")->required();

  std::string budget_corpus;
  auto* budget = app.add_subcommand("budget", "Count corpus words against the manifest budget");
  budget->add_option("--corpus", budget_corpus, "Corpus manifest (JSON)")->required();

  TrainArgs tr;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints");
  train->add_option("--config", tr.model_config, "Model config (JSON)")->required();
  train->add_option("--training-config", tr.training_config, "Training config (JSON); default restricted");
  train->add_option("--corpus", tr.corpus, "Corpus manifest (JSON)")->required();
  train->add_option("--out", tr.out, "Output directory")->required();
  train->add_option("--tokenizer", tr.tokenizer, "Existing tokenizer JSON");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Override the training seed");
  std::size_t block_length = 0;
  auto* block_opt = train->add_option("--block-length", block_length, "Training block length (default: max_length)")
                        ->check(CLI::PositiveNumber);
  train->add_flag("--resume", tr.resume, "Continue from OUT/last.ckpt");

  EvalArgs ev;
  ev.workers = default_workers();
  std::uint64_t eval_seed = 0;
  double training_words = 0.0;
  auto* eval = app.add_subcommand("eval", "Evaluate a scorer on a benchmark");
  eval->add_option("--scorer", ev.scorer, "ckpt:PATH, cmd:COMMAND or http://URL")->required();
  eval->add_option("--benchmark", ev.benchmark, "Benchmark items (JSON lines)")->required();
  eval->add_option("--norms", ev.norms, "Norm tables (JSON)");
  eval->add_option("--out", ev.out, "Output directory")->required();
  eval->add_option("--corpus", ev.corpus, "Corpus manifest giving the model's training exposure");
  auto* words_opt = eval->add_option("--training-words", training_words, "Word tokens seen in training");
  eval->add_option("--overrides", ev.overrides, "Manual completion adjudications (JSON lines)");
  auto* eval_seed_opt = eval->add_option("--seed", eval_seed, "Seed recorded in the run manifest");
  eval->add_flag("--canonical", ev.canonical, "Leave timestamps out of the report");
  eval->add_option("--workers", ev.workers, "Parallel items (default: BABYLAB_WORKERS or 1)")
      ->check(CLI::PositiveNumber);
  eval->add_option("--beams", ev.beams, "Beam width for completion")->check(CLI::PositiveNumber);

  ReportArgs rep;
  auto* report = app.add_subcommand("report", "Compare evaluation reports across scorers");
  report->add_option("reports", rep.reports, "report.json files")->required();
  report->add_option("--out", rep.out, "Directory for comparison.csv and comparison.txt");

  std::string params_config;
  std::string params_preset;
  auto* params = app.add_subcommand("count-params", "Count trainable parameters of a model config");
  auto* cfg_opt = params->add_option("--config", params_config, "Model config (JSON)");
  params->add_option("--preset", params_preset, "decoder or encoder")
      ->check(CLI::IsMember({"decoder", "encoder"}))
      ->excludes(cfg_opt);

  std::string serve_scorer;
  auto* serve = app.add_subcommand("serve", "Answer protocol requests on stdin/stdout");
  serve->add_option("--scorer", serve_scorer, "Scorer spec to serve")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::Config);
  }

  return run_command([&] {
    if (*tokenize) {
      cmd_tokenize(tok);
    } else if (*budget) {
      std::cout << cmd_budget(budget_corpus).dump(2) << "\n";
    } else if (*train) {
      if (*train_seed_opt) tr.seed = train_seed;
      if (*block_opt) tr.block_length = block_length;
      const auto log = cmd_train(tr);
      std::cout << "stop_reason: " << log.at("stop_reason").get<std::string>()
                << ", epochs: " << log.at("epochs").size() << "\n";
    } else if (*eval) {
      if (*eval_seed_opt) ev.seed = eval_seed;
      if (*words_opt) ev.training_words = training_words;
      cmd_eval(ev);
      std::cout << "report written to " << ev.out.string() << "\n";
    } else if (*report) {
      std::cout << cmd_report(rep);
    } else if (*params) {
      ModelConfig config;
      if (!params_config.empty()) {
        std::ifstream in(params_config);
        if (!in) throw IoError("cannot open " + params_config);
        config = ModelConfig::from_json(nlohmann::json::parse(in));
      } else if (params_preset == "encoder") {
        config = encoder_preset();
      } else {
        config = decoder_preset();
      }
      std::cout << count_params(config) << "\n";
    } else if (*serve) {
      const auto scorer = make_scorer(serve_scorer);
      std::string line;
      while (std::getline(std::cin, line)) {
        std::cout << protocol::handle_line(*scorer, line) << std::endl;
      }
    }
  });
}
