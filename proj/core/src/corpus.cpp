// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <numeric>
#include <random>
#include <stdexcept>

#include "babylab/error.hpp"
#include "babylab/unicode.hpp"

namespace babylab {
namespace {

constexpr double kDeclaredTolerance = 0.02;
constexpr double kBudgetSlack = 1.05;

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

}  // namespace

std::string_view to_string(SourceCategory category) {
  switch (category) {
    case SourceCategory::ChildDirectedSpeech: return "child-directed-speech";
    case SourceCategory::InteractionTranscript: return "interaction-transcript";
    case SourceCategory::MediaTranscript: return "media-transcript";
  }
  return "unknown";
}

SourceCategory parse_category(std::string_view text) {
  if (text == "child-directed-speech") return SourceCategory::ChildDirectedSpeech;
  if (text == "interaction-transcript") return SourceCategory::InteractionTranscript;
  if (text == "media-transcript") return SourceCategory::MediaTranscript;
  throw ConfigError("corpus manifest: unknown category '" + std::string(text) + "'");
}

std::size_t CorpusManifest::declared_total() const {
  std::size_t total = 0;
  for (const auto& s : sources) total += s.declared_words;
  return total;
}

CorpusManifest CorpusManifest::from_json(const nlohmann::json& doc, const std::filesystem::path& base) {
  CorpusManifest m;
  try {
    for (const auto& entry : doc.at("sources")) {
      CorpusSource s;
      s.path = entry.at("path").get<std::string>();
      if (s.path.is_relative() && !base.empty()) s.path = base / s.path;
      s.category = parse_category(entry.at("category").get<std::string>());
      s.declared_words = entry.value("declared_words", std::size_t{0});
      m.sources.push_back(std::move(s));
    }
    m.target_budget = doc.value("target_budget", std::size_t{0});
    m.words_per_year = doc.value("words_per_year", m.words_per_year);
    m.epochs = doc.value("epochs", m.epochs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corpus manifest: ") + e.what());
  }
  if (!(m.words_per_year > 0.0)) throw ConfigError("corpus manifest: words_per_year must be positive");
  return m;
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus manifest " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("corpus manifest " + path.string() + ": " + e.what());
  }
  return from_json(doc, path.parent_path());
}

nlohmann::json CorpusManifest::to_json() const {
  nlohmann::json sources_json = nlohmann::json::array();
  for (const auto& s : sources) {
    sources_json.push_back({{"path", s.path.string()},
                            {"category", to_string(s.category)},
                            {"declared_words", s.declared_words}});
  }
  return {{"sources", sources_json},
          {"target_budget", target_budget},
          {"words_per_year", words_per_year},
          {"epochs", epochs}};
}

std::size_t count_words(std::string_view text) {
  std::size_t count = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start && unicode::contains_alnum(text.substr(start, i - start))) ++count;
  }
  return count;
}

std::vector<std::string> read_utterances(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus source " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const bool blank = std::all_of(line.begin(), line.end(), is_space);
    if (!blank) lines.push_back(line);
  }
  return lines;
}

nlohmann::json BudgetReport::to_json() const {
  nlohmann::json src = nlohmann::json::array();
  for (const auto& s : sources) {
    nlohmann::json entry = {{"path", s.path.string()},
                            {"category", to_string(s.category)},
                            {"declared_words", s.declared_words},
                            {"counted_words", s.counted_words},
                            {"declared_mismatch", s.declared_mismatch}};
    if (s.error) entry["error"] = *s.error;
    src.push_back(entry);
  }
  return {{"total_words", total_words},
          {"per_category", per_category},
          {"simulated_age_years", simulated_age_years},
          {"over_budget", over_budget},
          {"under_budget", under_budget},
          {"sources", src}};
}

BudgetReport validate_budget(const CorpusManifest& manifest) {
  std::vector<std::future<SourceReport>> jobs;
  for (const auto& source : manifest.sources) {
    jobs.push_back(std::async(std::launch::async, [source] {
      SourceReport r{source.path, source.category, source.declared_words, 0, false, std::nullopt};
      try {
        for (const auto& line : read_utterances(source.path)) r.counted_words += count_words(line);
        const double declared = static_cast<double>(source.declared_words);
        r.declared_mismatch = std::abs(static_cast<double>(r.counted_words) - declared) >
                              kDeclaredTolerance * declared;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      return r;
    }));
  }
  BudgetReport report;
  for (auto category : {SourceCategory::ChildDirectedSpeech, SourceCategory::InteractionTranscript,
                        SourceCategory::MediaTranscript}) {
    report.per_category[std::string(to_string(category))] = 0;
  }
  for (auto& job : jobs) {
    SourceReport r = job.get();
    report.total_words += r.counted_words;
    report.per_category[std::string(to_string(r.category))] += r.counted_words;
    report.sources.push_back(std::move(r));
  }
  report.simulated_age_years = static_cast<double>(report.total_words) *
                               static_cast<double>(manifest.epochs) / manifest.words_per_year;
  const auto total = static_cast<double>(report.total_words);
  report.over_budget = total > kBudgetSlack * static_cast<double>(manifest.target_budget);
  report.under_budget = total < (2.0 - kBudgetSlack) * static_cast<double>(manifest.target_budget);
  return report;
}

std::vector<std::vector<std::string>> load_documents(const CorpusManifest& manifest) {
  std::vector<std::vector<std::string>> docs;
  for (const auto& s : manifest.sources) docs.push_back(read_utterances(s.path));
  return docs;
}

std::vector<std::vector<TokenId>> build_stream(const std::vector<std::vector<std::string>>& documents,
                                               const Tokenizer& tokenizer, std::size_t block_length,
                                               std::size_t max_length, std::uint64_t seed) {
  if (block_length == 0) throw std::invalid_argument("build_stream: block_length must be positive");
  if (block_length > max_length) {
    throw std::invalid_argument("build_stream: block_length " + std::to_string(block_length) +
                                " exceeds model max_length " + std::to_string(max_length));
  }
  std::vector<std::size_t> order(documents.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<TokenId> stream;
  for (auto d : order) {
    for (const auto& utterance : documents[d]) {
      auto ids = tokenizer.encode(utterance);
      stream.push_back(kBosId);
      stream.insert(stream.end(), ids.begin(), ids.end());
      stream.push_back(kEosId);
    }
  }
  std::vector<std::vector<TokenId>> blocks;
  for (std::size_t i = 0; i < stream.size(); i += block_length) {
    std::vector<TokenId> block(stream.begin() + static_cast<std::ptrdiff_t>(i),
                               stream.begin() + static_cast<std::ptrdiff_t>(std::min(i + block_length, stream.size())));
    block.resize(block_length, kPadId);
    blocks.push_back(std::move(block));
  }
  return blocks;
}

}  // namespace babylab
