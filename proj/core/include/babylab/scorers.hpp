// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "babylab/benchmark.hpp"
#include "babylab/model.hpp"
#include "babylab/tokenizer.hpp"

namespace babylab {

/// Scores text with an in-process transformer. Decoders support nll and
/// beam-search completion; encoders support pseudo-nll and mask filling.
class ModelScorer final : public Scorer {
 public:
  ModelScorer(Tokenizer tokenizer, TransformerModel model, std::string name = "model");

  /// Loads a checkpoint whose metadata embeds the tokenizer.
  static ModelScorer from_checkpoint(const std::filesystem::path& path);

  std::string name() const override { return name_; }
  ScorerCapabilities capabilities() const override;
  NllSum sequence_nll(std::string_view text) const override;
  GeneratedText complete(std::string_view prompt, std::size_t beams,
                         std::size_t max_new_tokens) const override;
  std::vector<MaskCandidate> fill_mask(std::string_view text, std::size_t k) const override;

  const Tokenizer& tokenizer() const { return tokenizer_; }
  const TransformerModel& model() const { return model_; }

  /// Word tokens the model was trained on, if the checkpoint recorded it.
  std::optional<std::size_t> training_words() const { return training_words_; }
  void set_training_words(std::size_t words) { training_words_ = words; }

  /// Ids that end a generated completion: eos and every token whose text
  /// ends in sentence-final punctuation.
  const std::vector<TokenId>& stop_ids() const { return stop_ids_; }

 private:
  Tokenizer tokenizer_;
  TransformerModel model_;
  std::string name_;
  std::optional<std::size_t> training_words_;
  std::vector<TokenId> stop_ids_;
};

/// Talks the line-delimited JSON protocol to a child process over its
/// standard streams. Requests are serialized; the child is terminated on
/// destruction.
class ProcessScorer final : public Scorer {
 public:
  explicit ProcessScorer(std::string command,
                         std::chrono::milliseconds timeout = std::chrono::seconds(60));
  ~ProcessScorer() override;
  ProcessScorer(const ProcessScorer&) = delete;
  ProcessScorer& operator=(const ProcessScorer&) = delete;

  std::string name() const override { return "cmd:" + command_; }
  ScorerCapabilities capabilities() const override { return {true, true, true}; }
  NllSum sequence_nll(std::string_view text) const override;
  GeneratedText complete(std::string_view prompt, std::size_t beams,
                         std::size_t max_new_tokens) const override;
  std::vector<MaskCandidate> fill_mask(std::string_view text, std::size_t k) const override;
  bool healthy() const override;

  /// Sends one request line and waits for one reply line.
  nlohmann::json exchange(const nlohmann::json& request) const;

 private:
  std::string command_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  mutable std::string buffer_;
  mutable std::mutex mutex_;
  mutable bool broken_ = false;
};

/// POSTs protocol requests as JSON bodies to an HTTP endpoint.
class HttpScorer final : public Scorer {
 public:
  explicit HttpScorer(std::string url, std::chrono::seconds timeout = std::chrono::seconds(60));

  std::string name() const override { return url_; }
  ScorerCapabilities capabilities() const override { return {true, true, true}; }
  NllSum sequence_nll(std::string_view text) const override;
  GeneratedText complete(std::string_view prompt, std::size_t beams,
                         std::size_t max_new_tokens) const override;
  std::vector<MaskCandidate> fill_mask(std::string_view text, std::size_t k) const override;

  nlohmann::json exchange(const nlohmann::json& request) const;

 private:
  std::string url_;
  std::string host_;
  std::string path_;
  std::chrono::seconds timeout_;
};

/// Builds a scorer from a spec string: "ckpt:PATH" (or any path ending in
/// .ckpt), "cmd:COMMAND LINE", or an "http://" URL. Throws ConfigError for an
/// unrecognised spec and ScorerError when the scorer cannot be reached.
std::unique_ptr<Scorer> make_scorer(std::string_view spec);

}  // namespace babylab
