// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "babylab/model.hpp"

namespace babylab {

enum class Task { Completion, Acceptability, Idiom, SentenceComprehension, LexicalComprehension };
enum class SourceTest { BVL, TROG2, TCGB2, PPVT };

std::string_view to_string(Task task);
std::string_view to_string(SourceTest test);
Task parse_task(std::string_view text);
SourceTest parse_source_test(std::string_view text);

struct CompletionPayload {
  std::string prompt_with_mask;
  std::vector<std::string> strict_answers;
  std::vector<std::string> loose_forms;
};

struct MinimalPairPayload {
  std::string grammatical;
  std::string ungrammatical;
};

struct MultipleChoicePayload {
  std::string stimulus;
  std::vector<std::string> options;
  std::size_t target_index = 0;
};

/// One benchmark item. JSON-lines schema (one object per line, flat):
///   {"id", "task", "source_test", "structure_tag"?,
///    completion:      "prompt", "strict_answers", "loose_forms"
///    acceptability:   "grammatical", "ungrammatical"
///    comprehension:   "stimulus", "options", "target_index"}
struct BenchmarkItem {
  std::string id;
  Task task = Task::Acceptability;
  SourceTest source_test = SourceTest::BVL;
  std::optional<std::string> structure_tag;
  std::variant<CompletionPayload, MinimalPairPayload, MultipleChoicePayload> payload;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  static BenchmarkItem from_json(const nlohmann::json& doc);
};

std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path);
void save_benchmark(const std::filesystem::path& path, std::span<const BenchmarkItem> items);

struct ScorerCapabilities {
  bool nll = true;
  bool complete = false;
  bool fill_mask = false;
};

struct GeneratedText {
  std::string text;
  double score = 0.0;
};

struct MaskCandidate {
  std::string token;
  double score = 0.0;
};

/// Anything that can assign likelihoods to text: an in-process model or an
/// external adapter. Implementations must be safe to call from several
/// threads and deterministic per text within a session. Failures are
/// reported by throwing ScorerError.
class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual std::string name() const = 0;
  virtual ScorerCapabilities capabilities() const = 0;
  virtual NllSum sequence_nll(std::string_view text) const = 0;
  virtual GeneratedText complete(std::string_view prompt, std::size_t beams,
                                 std::size_t max_new_tokens) const;
  /// `text` contains exactly one "<mask>" marker.
  virtual std::vector<MaskCandidate> fill_mask(std::string_view text, std::size_t k) const;
  /// False once the scorer can no longer answer anything, e.g. a dead child.
  virtual bool healthy() const { return true; }
};

inline constexpr std::string_view kMaskMarker = "<mask>";

/// "{stimulus}, cioè {option}." with exactly one connective; a leading
/// "Cioè"/"cioè" on the option is normalised to lowercase, bare options get
/// it prefixed, whitespace is collapsed and one final period is ensured.
/// Throws std::invalid_argument for empty inputs or a doubled connective.
std::string assemble_choice_sentence(std::string_view stimulus, std::string_view option);

/// Outcome of one item. `chosen` holds the option index (multiple choice and
/// minimal pairs, where 0 is the grammatical member) or the generated text.
struct TaskResult {
  std::string item_id;
  Task task = Task::Acceptability;
  SourceTest source_test = SourceTest::BVL;
  std::optional<std::string> structure_tag;
  std::variant<std::monostate, std::size_t, std::string> chosen;
  std::vector<double> per_option_perplexity;
  bool correct = false;
  std::optional<bool> loose_correct;
  bool tie = false;
  std::optional<std::string> error;

  bool errored() const { return error.has_value(); }
  nlohmann::json to_json() const;
};

TaskResult run_multiple_choice(const Scorer& scorer, const BenchmarkItem& item);
TaskResult run_acceptability(const Scorer& scorer, const BenchmarkItem& item);

struct CompletionOptions {
  std::size_t beams = 3;
  std::size_t max_new_tokens = 12;
};

TaskResult run_completion(const Scorer& scorer, const BenchmarkItem& item,
                          const CompletionOptions& options = {});

/// Strict/loose adjudication of a generated continuation. Generations are
/// compared on normalised words (NFC, lowercase, punctuation stripped).
/// Strict: the generation begins with a strict answer. Loose: any loose
/// form occurs as a contiguous word run. Strict implies loose. When
/// `from_mask_fill` is set the generation is a single subword and is matched
/// as a prefix of the first word of an answer.
struct CompletionVerdict {
  bool strict = false;
  bool loose = false;
};
CompletionVerdict adjudicate_completion(const CompletionPayload& payload, std::string_view generation,
                                        bool from_mask_fill = false);

/// Dispatches on the item's payload.
TaskResult run_item(const Scorer& scorer, const BenchmarkItem& item,
                    const CompletionOptions& options = {});

struct Accuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct BenchmarkRun {
  std::vector<TaskResult> results;  // sorted by item id
  std::map<std::string, Accuracy> per_task;       // "SOURCE/task"
  std::map<std::string, Accuracy> per_structure;  // structure_tag
  Accuracy completion_strict;
  Accuracy completion_loose;
  std::vector<std::string> errored;
};

/// Task key used in reports, e.g. "BVL/acceptability".
std::string task_key(SourceTest test, Task task);

/// Accuracy tables over results; errored items are left out of every
/// denominator.
BenchmarkRun summarize(std::vector<TaskResult> results);

/// Evaluates every item with up to `workers` threads. Output does not
/// depend on item order or worker count. Throws std::invalid_argument for
/// an empty item set.
BenchmarkRun run_benchmark(const Scorer& scorer, std::span<const BenchmarkItem> items,
                           const CompletionOptions& options = {}, std::size_t workers = 1);

/// Manual strict/loose adjudications keyed by item id and exact generation.
struct CompletionOverride {
  std::string item_id;
  std::string generation;
  bool strict = false;
  bool loose = false;
};
std::vector<CompletionOverride> load_overrides(const std::filesystem::path& path);
void apply_overrides(std::vector<TaskResult>& results, std::span<const CompletionOverride> overrides);

}  // namespace babylab
