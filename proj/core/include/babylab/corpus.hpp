// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "babylab/tokenizer.hpp"

namespace babylab {

enum class SourceCategory { ChildDirectedSpeech, InteractionTranscript, MediaTranscript };

std::string_view to_string(SourceCategory category);
SourceCategory parse_category(std::string_view text);

struct CorpusSource {
  std::filesystem::path path;
  SourceCategory category = SourceCategory::ChildDirectedSpeech;
  std::size_t declared_words = 0;
};

/// Manifest JSON:
///   {"sources": [{"path", "category", "declared_words"}...],
///    "target_budget": words, "words_per_year": words, "epochs": n}
/// Relative source paths resolve against the manifest's directory.
struct CorpusManifest {
  std::vector<CorpusSource> sources;
  std::size_t target_budget = 0;
  double words_per_year = 10'000'000.0;
  std::size_t epochs = 2;

  std::size_t declared_total() const;

  static CorpusManifest load(const std::filesystem::path& path);
  static CorpusManifest from_json(const nlohmann::json& doc, const std::filesystem::path& base = {});
  nlohmann::json to_json() const;
};

/// Counts whitespace-delimited tokens that contain at least one letter or
/// digit; punctuation-only tokens do not count.
std::size_t count_words(std::string_view text);

struct SourceReport {
  std::filesystem::path path;
  SourceCategory category = SourceCategory::ChildDirectedSpeech;
  std::size_t declared_words = 0;
  std::size_t counted_words = 0;
  bool declared_mismatch = false;  // outside +/-2% of declared
  std::optional<std::string> error;
};

struct BudgetReport {
  std::size_t total_words = 0;
  std::map<std::string, std::size_t> per_category;
  double simulated_age_years = 0.0;
  bool over_budget = false;
  bool under_budget = false;
  std::vector<SourceReport> sources;

  nlohmann::json to_json() const;
};

/// Counts every source (concurrently) and derives
/// simulated_age_years = total_words * epochs / words_per_year. Unreadable
/// sources are reported per entry; the report is still produced.
BudgetReport validate_budget(const CorpusManifest& manifest);

/// Reads a source as one utterance per line, skipping blank lines.
std::vector<std::string> read_utterances(const std::filesystem::path& path);

/// Loads every readable source's utterances, grouped by document (source).
std::vector<std::vector<std::string>> load_documents(const CorpusManifest& manifest);

/// Shuffles documents by seed, emits every utterance as bos + tokens + eos,
/// and cuts the resulting stream into `block_length` blocks; the last block
/// is right-padded with pad ids.
/// Throws std::invalid_argument when block_length is 0 or exceeds
/// `max_length`.
std::vector<std::vector<TokenId>> build_stream(const std::vector<std::vector<std::string>>& documents,
                                               const Tokenizer& tokenizer, std::size_t block_length,
                                               std::size_t max_length, std::uint64_t seed);

}  // namespace babylab
