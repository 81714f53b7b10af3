// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <thread>

#include "babylab/error.hpp"
#include "babylab/unicode.hpp"

namespace babylab {
namespace {

constexpr std::string_view kConnective = "cioè";

std::string collapse_spaces(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

void strip_trailing(std::string& s, std::string_view chars) {
  while (!s.empty() && (chars.find(s.back()) != std::string_view::npos || s.back() == ' ')) {
    s.pop_back();
  }
}

// Splits off the first space- or comma-delimited word.
std::pair<std::string, std::string> first_word(const std::string& s) {
  const auto end = s.find_first_of(" ,");
  if (end == std::string::npos) return {s, ""};
  std::size_t rest = end;
  while (rest < s.size() && (s[rest] == ' ' || s[rest] == ',')) ++rest;
  return {s.substr(0, end), s.substr(rest)};
}

bool is_connective(std::string_view word) { return unicode::to_lower(word) == kConnective; }

bool contains_connective(const std::string& text) {
  const auto ws = unicode::words(text);
  return std::find(ws.begin(), ws.end(), kConnective) != ws.end();
}

bool starts_with_words(const std::vector<std::string>& haystack, const std::vector<std::string>& prefix) {
  return !prefix.empty() && prefix.size() <= haystack.size() &&
         std::equal(prefix.begin(), prefix.end(), haystack.begin());
}

bool contains_words(const std::vector<std::string>& haystack, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

std::vector<std::string> string_list(const nlohmann::json& doc, const char* field) {
  std::vector<std::string> out;
  for (const auto& v : doc.at(field)) out.push_back(v.get<std::string>());
  return out;
}

TaskResult blank_result(const BenchmarkItem& item) {
  TaskResult r;
  r.item_id = item.id;
  r.task = item.task;
  r.source_test = item.source_test;
  r.structure_tag = item.structure_tag;
  return r;
}

double scored_perplexity(const Scorer& scorer, const std::string& text) {
  const NllSum nll = scorer.sequence_nll(text);
  if (nll.tokens == 0) throw ScorerError("scorer returned zero tokens for '" + text + "'");
  const double ppl = perplexity(nll);
  if (!std::isfinite(ppl) || !(ppl > 0.0)) {
    throw ScorerError("scorer returned a non-finite perplexity for '" + text + "'");
  }
  return ppl;
}

}  // namespace

std::string_view to_string(Task task) {
  switch (task) {
    case Task::Completion: return "completion";
    case Task::Acceptability: return "acceptability";
    case Task::Idiom: return "idiom";
    case Task::SentenceComprehension: return "sentence_comprehension";
    case Task::LexicalComprehension: return "lexical_comprehension";
  }
  return "unknown";
}

std::string_view to_string(SourceTest test) {
  switch (test) {
    case SourceTest::BVL: return "BVL";
    case SourceTest::TROG2: return "TROG2";
    case SourceTest::TCGB2: return "TCGB2";
    case SourceTest::PPVT: return "PPVT";
  }
  return "unknown";
}

Task parse_task(std::string_view text) {
  for (auto t : {Task::Completion, Task::Acceptability, Task::Idiom, Task::SentenceComprehension,
                 Task::LexicalComprehension}) {
    if (to_string(t) == text) return t;
  }
  throw ConfigError("benchmark: unknown task '" + std::string(text) + "'");
}

SourceTest parse_source_test(std::string_view text) {
  for (auto t : {SourceTest::BVL, SourceTest::TROG2, SourceTest::TCGB2, SourceTest::PPVT}) {
    if (to_string(t) == text) return t;
  }
  throw ConfigError("benchmark: unknown source_test '" + std::string(text) + "'");
}

void BenchmarkItem::validate() const {
  auto fail = [this](const std::string& why) {
    throw ConfigError("benchmark item '" + id + "': " + why);
  };
  if (id.empty()) throw ConfigError("benchmark item with empty id");
  const bool wants_completion = task == Task::Completion;
  const bool wants_pair = task == Task::Acceptability;
  if (wants_completion != std::holds_alternative<CompletionPayload>(payload) ||
      wants_pair != std::holds_alternative<MinimalPairPayload>(payload)) {
    fail("payload does not match task " + std::string(to_string(task)));
  }
  if (const auto* c = std::get_if<CompletionPayload>(&payload)) {
    const auto marker = c->prompt_with_mask.find(kMaskMarker);
    if (marker == std::string::npos ||
        c->prompt_with_mask.find(kMaskMarker, marker + 1) != std::string::npos) {
      fail("prompt must contain exactly one <mask>");
    }
    if (c->strict_answers.empty()) fail("strict_answers is empty");
    if (c->loose_forms.empty()) fail("loose_forms is empty");
    for (const auto& answer : c->strict_answers) {
      CompletionPayload loose_only{c->prompt_with_mask, {}, c->loose_forms};
      if (!adjudicate_completion(loose_only, answer).loose) {
        fail("strict answer '" + answer + "' is not covered by any loose form");
      }
    }
  } else if (const auto* p = std::get_if<MinimalPairPayload>(&payload)) {
    if (p->grammatical.empty() || p->ungrammatical.empty()) fail("minimal pair member is empty");
  } else if (const auto* m = std::get_if<MultipleChoicePayload>(&payload)) {
    if (m->options.size() < 3 || m->options.size() > 4) fail("multiple choice needs 3 or 4 options");
    if (m->target_index >= m->options.size()) fail("target_index out of range");
    if (m->stimulus.empty()) fail("empty stimulus");
  }
}

nlohmann::json BenchmarkItem::to_json() const {
  nlohmann::json doc = {{"id", id}, {"task", to_string(task)}, {"source_test", to_string(source_test)}};
  if (structure_tag) doc["structure_tag"] = *structure_tag;
  if (const auto* c = std::get_if<CompletionPayload>(&payload)) {
    doc["prompt"] = c->prompt_with_mask;
    doc["strict_answers"] = c->strict_answers;
    doc["loose_forms"] = c->loose_forms;
  } else if (const auto* p = std::get_if<MinimalPairPayload>(&payload)) {
    doc["grammatical"] = p->grammatical;
    doc["ungrammatical"] = p->ungrammatical;
  } else if (const auto* m = std::get_if<MultipleChoicePayload>(&payload)) {
    doc["stimulus"] = m->stimulus;
    doc["options"] = m->options;
    doc["target_index"] = m->target_index;
  }
  return doc;
}

BenchmarkItem BenchmarkItem::from_json(const nlohmann::json& doc) {
  BenchmarkItem item;
  try {
    item.id = doc.at("id").get<std::string>();
    item.task = parse_task(doc.at("task").get<std::string>());
    item.source_test = parse_source_test(doc.value("source_test", std::string("BVL")));
    if (doc.contains("structure_tag") && doc.at("structure_tag").is_string()) {
      item.structure_tag = doc.at("structure_tag").get<std::string>();
    }
    switch (item.task) {
      case Task::Completion:
        item.payload = CompletionPayload{doc.at("prompt").get<std::string>(),
                                         string_list(doc, "strict_answers"),
                                         string_list(doc, "loose_forms")};
        break;
      case Task::Acceptability:
        item.payload = MinimalPairPayload{doc.at("grammatical").get<std::string>(),
                                          doc.at("ungrammatical").get<std::string>()};
        break;
      default:
        item.payload = MultipleChoicePayload{doc.at("stimulus").get<std::string>(),
                                             string_list(doc, "options"),
                                             doc.at("target_index").get<std::size_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("benchmark item " + doc.value("id", std::string("?")) + ": " + e.what());
  }
  item.validate();
  return item;
}

std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open benchmark file " + path.string());
  std::vector<BenchmarkItem> items;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    auto item = BenchmarkItem::from_json(doc);
    if (!ids.insert(item.id).second) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": duplicate item id '" +
                        item.id + "'");
    }
    items.push_back(std::move(item));
  }
  return items;
}

void save_benchmark(const std::filesystem::path& path, std::span<const BenchmarkItem> items) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& item : items) out << item.to_json().dump() << '\n';
}

GeneratedText Scorer::complete(std::string_view, std::size_t, std::size_t) const {
  throw ScorerError(name() + ": completion is not supported");
}

std::vector<MaskCandidate> Scorer::fill_mask(std::string_view, std::size_t) const {
  throw ScorerError(name() + ": mask filling is not supported");
}

std::string assemble_choice_sentence(std::string_view stimulus_in, std::string_view option_in) {
  std::string stimulus = collapse_spaces(unicode::nfc(stimulus_in));
  std::string option = collapse_spaces(unicode::nfc(option_in));
  strip_trailing(stimulus, ".,;:");
  if (stimulus.empty()) throw std::invalid_argument("assemble_choice_sentence: empty stimulus");
  if (option.empty()) throw std::invalid_argument("assemble_choice_sentence: empty option");
  if (contains_connective(stimulus)) {
    throw std::invalid_argument("assemble_choice_sentence: stimulus already contains the connective");
  }
  auto [head, rest] = first_word(option);
  if (is_connective(head)) option = rest;
  strip_trailing(option, ".,;:");
  if (option.empty()) throw std::invalid_argument("assemble_choice_sentence: option has no content");
  if (contains_connective(option)) {
    throw std::invalid_argument("assemble_choice_sentence: double connective in option '" +
                                std::string(option_in) + "'");
  }
  std::string sentence = stimulus + ", " + std::string(kConnective) + " " + option;
  if (sentence.back() != '!' && sentence.back() != '?') sentence.push_back('.');
  return sentence;
}

nlohmann::json TaskResult::to_json() const {
  nlohmann::json doc = {{"item_id", item_id},
                        {"task", to_string(task)},
                        {"source_test", to_string(source_test)},
                        {"correct", correct},
                        {"tie", tie}};
  if (structure_tag) doc["structure_tag"] = *structure_tag;
  if (const auto* index = std::get_if<std::size_t>(&chosen)) doc["chosen"] = *index;
  if (const auto* text = std::get_if<std::string>(&chosen)) doc["chosen"] = *text;
  if (!per_option_perplexity.empty()) doc["per_option_perplexity"] = per_option_perplexity;
  if (loose_correct) doc["loose_correct"] = *loose_correct;
  if (error) doc["error"] = *error;
  return doc;
}

TaskResult run_multiple_choice(const Scorer& scorer, const BenchmarkItem& item) {
  const auto& mc = std::get<MultipleChoicePayload>(item.payload);
  TaskResult r = blank_result(item);
  try {
    for (const auto& option : mc.options) {
      r.per_option_perplexity.push_back(
          scored_perplexity(scorer, assemble_choice_sentence(mc.stimulus, option)));
    }
  } catch (const ScorerError& e) {
    r.per_option_perplexity.clear();
    r.error = e.what();
    return r;
  }
  const auto& ppl = r.per_option_perplexity;
  const auto best = static_cast<std::size_t>(std::min_element(ppl.begin(), ppl.end()) - ppl.begin());
  r.tie = std::count(ppl.begin(), ppl.end(), ppl[best]) > 1;
  r.chosen = best;
  r.correct = best == mc.target_index;
  return r;
}

TaskResult run_acceptability(const Scorer& scorer, const BenchmarkItem& item) {
  const auto& pair = std::get<MinimalPairPayload>(item.payload);
  TaskResult r = blank_result(item);
  try {
    r.per_option_perplexity = {scored_perplexity(scorer, pair.grammatical),
                               scored_perplexity(scorer, pair.ungrammatical)};
  } catch (const ScorerError& e) {
    r.per_option_perplexity.clear();
    r.error = e.what();
    return r;
  }
  const double good = r.per_option_perplexity[0];
  const double bad = r.per_option_perplexity[1];
  r.tie = good == bad;
  r.chosen = std::size_t{good <= bad ? 0u : 1u};
  r.correct = good < bad;
  return r;
}

CompletionVerdict adjudicate_completion(const CompletionPayload& payload, std::string_view generation,
                                        bool from_mask_fill) {
  const auto generated = unicode::words(generation);
  CompletionVerdict v;
  if (generated.empty()) return v;
  if (from_mask_fill) {
    const std::string& piece = generated.front();
    auto prefix_of_first = [&](const std::string& answer) {
      const auto ws = unicode::words(answer);
      return !ws.empty() && ws.front().starts_with(piece);
    };
    v.strict = std::any_of(payload.strict_answers.begin(), payload.strict_answers.end(), prefix_of_first);
    v.loose = v.strict ||
              std::any_of(payload.loose_forms.begin(), payload.loose_forms.end(), prefix_of_first);
    return v;
  }
  v.strict = std::any_of(payload.strict_answers.begin(), payload.strict_answers.end(),
                         [&](const std::string& a) { return starts_with_words(generated, unicode::words(a)); });
  v.loose = v.strict ||
            std::any_of(payload.loose_forms.begin(), payload.loose_forms.end(),
                        [&](const std::string& f) { return contains_words(generated, unicode::words(f)); });
  return v;
}

TaskResult run_completion(const Scorer& scorer, const BenchmarkItem& item,
                          const CompletionOptions& options) {
  const auto& c = std::get<CompletionPayload>(item.payload);
  TaskResult r = blank_result(item);
  const auto caps = scorer.capabilities();
  try {
    std::string generation;
    bool from_mask = false;
    if (caps.complete) {
      std::string prompt = c.prompt_with_mask.substr(0, c.prompt_with_mask.find(kMaskMarker));
      while (!prompt.empty() && prompt.back() == ' ') prompt.pop_back();
      generation = scorer.complete(prompt, options.beams, options.max_new_tokens).text;
    } else if (caps.fill_mask) {
      const auto candidates = scorer.fill_mask(c.prompt_with_mask, 1);
      if (candidates.empty()) throw ScorerError("mask filling returned no candidates");
      generation = candidates.front().token;
      from_mask = true;
    } else {
      throw ScorerError(scorer.name() + " can neither complete nor fill masks");
    }
    const auto verdict = adjudicate_completion(c, generation, from_mask);
    r.chosen = generation;
    r.correct = verdict.strict;
    r.loose_correct = verdict.loose;
  } catch (const ScorerError& e) {
    r.error = e.what();
  }
  return r;
}

TaskResult run_item(const Scorer& scorer, const BenchmarkItem& item, const CompletionOptions& options) {
  switch (item.task) {
    case Task::Completion: return run_completion(scorer, item, options);
    case Task::Acceptability: return run_acceptability(scorer, item);
    default: return run_multiple_choice(scorer, item);
  }
}

std::string task_key(SourceTest test, Task task) {
  return std::string(to_string(test)) + "/" + std::string(to_string(task));
}

BenchmarkRun summarize(std::vector<TaskResult> results) {
  std::sort(results.begin(), results.end(),
            [](const TaskResult& a, const TaskResult& b) { return a.item_id < b.item_id; });
  BenchmarkRun run;
  for (const auto& r : results) {
    if (r.errored()) {
      run.errored.push_back(r.item_id);
      continue;
    }
    auto& task = run.per_task[task_key(r.source_test, r.task)];
    ++task.total;
    task.correct += r.correct ? 1 : 0;
    if (r.structure_tag) {
      auto& s = run.per_structure[*r.structure_tag];
      ++s.total;
      s.correct += r.correct ? 1 : 0;
    }
    if (r.task == Task::Completion) {
      ++run.completion_strict.total;
      ++run.completion_loose.total;
      run.completion_strict.correct += r.correct ? 1 : 0;
      run.completion_loose.correct += r.loose_correct.value_or(false) ? 1 : 0;
    }
  }
  run.results = std::move(results);
  return run;
}

BenchmarkRun run_benchmark(const Scorer& scorer, std::span<const BenchmarkItem> items,
                           const CompletionOptions& options, std::size_t workers) {
  if (items.empty()) throw std::invalid_argument("run_benchmark: empty item set");
  std::vector<TaskResult> results(items.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      results[i] = run_item(scorer, items[i], options);
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, items.size());
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return summarize(std::move(results));
}

std::vector<CompletionOverride> load_overrides(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open override file " + path.string());
  std::vector<CompletionOverride> out;
  try {
    nlohmann::json doc;
    in >> doc;
    for (const auto& e : doc.at("overrides")) {
      out.push_back({e.at("item_id").get<std::string>(), e.at("generation").get<std::string>(),
                     e.at("strict").get<bool>(), e.at("loose").get<bool>()});
      if (out.back().strict && !out.back().loose) {
        throw ConfigError("override for " + out.back().item_id + " is strict but not loose");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("override file " + path.string() + ": " + e.what());
  }
  return out;
}

void apply_overrides(std::vector<TaskResult>& results, std::span<const CompletionOverride> overrides) {
  // A strict match is always a loose match too.
  for (const auto& o : overrides) {
    if (o.strict && !o.loose) throw ConfigError("override for " + o.item_id + " is strict-correct but loose-wrong");
  }
  for (auto& r : results) {
    if (r.task != Task::Completion || r.errored()) continue;
    const auto* generation = std::get_if<std::string>(&r.chosen);
    if (generation == nullptr) continue;
    for (const auto& o : overrides) {
      if (o.item_id == r.item_id && o.generation == *generation) {
        r.correct = o.strict;
        r.loose_correct = o.loose;
      }
    }
  }
}

}  // namespace babylab
