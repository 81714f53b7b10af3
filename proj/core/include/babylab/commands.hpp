// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace babylab {

std::string_view tool_version();

struct TokenizeArgs {
  std::filesystem::path corpus;  // corpus manifest
  std::size_t vocab_size = 0;
  std::filesystem::path out;     // tokenizer JSON
};

/// Trains a tokenizer on every utterance of the corpus and writes it.
void cmd_tokenize(const TokenizeArgs& args);

struct TrainArgs {
  std::filesystem::path model_config;
  std::filesystem::path training_config;  // empty: restricted defaults
  std::filesystem::path corpus;
  std::filesystem::path out;              // output directory
  std::filesystem::path tokenizer;        // empty: train one at the model's vocab size
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> block_length;  // default: the model's max_length
  bool resume = false;                    // continue from out/last.ckpt
};

/// Trains a model. Writes into `out`: tokenizer.json, epoch-N.ckpt,
/// last.ckpt, best.ckpt and training_log.json. Returns the log as JSON.
nlohmann::json cmd_train(const TrainArgs& args);

struct EvalArgs {
  std::string scorer;
  std::filesystem::path benchmark;
  std::filesystem::path norms;           // optional
  std::filesystem::path out;             // output directory
  std::filesystem::path corpus;          // optional manifest giving the model's exposure
  std::optional<double> training_words;  // overrides corpus and checkpoint figures
  std::filesystem::path overrides;       // optional completion adjudications
  std::optional<std::uint64_t> seed;
  bool canonical = false;
  std::size_t workers = 1;
  std::size_t beams = 3;
};

/// Evaluates a scorer on a benchmark and writes report.json, report.csv and
/// report.txt into `out`. Nothing is written unless every part is rendered.
/// Returns the report.
nlohmann::json cmd_eval(const EvalArgs& args);

struct ReportArgs {
  std::vector<std::filesystem::path> reports;
  std::filesystem::path out;  // optional directory for comparison.csv/.txt
};

/// Compares reports; returns the comparison text table.
std::string cmd_report(const ReportArgs& args);

/// Word-budget report for a corpus manifest, as JSON.
nlohmann::json cmd_budget(const std::filesystem::path& corpus);

/// Runs `body` and maps failures onto exit codes: 2 configuration, 3 scorer
/// or protocol, 4 IO, 1 anything else. Diagnostics go to stderr.
int run_command(const std::function<void()>& body);

}  // namespace babylab
