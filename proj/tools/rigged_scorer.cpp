// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

// Scripted external scorer speaking the line protocol on stdin/stdout.
// Every item is answered correctly unless listed with --wrong (answered
// incorrectly), --fail (answered with an error reply) or --garble (answered
// with a line that is not JSON).

#include <iostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>

#include "babylab/benchmark.hpp"
#include "babylab/error.hpp"
#include "babylab/protocol.hpp"

namespace {

using namespace babylab;

constexpr double kGood = 1.0;
constexpr double kBad = 5.0;
constexpr double kWorst = 9.0;

enum class Fate { Right, Wrong, Fail, Garble };

class RiggedScorer final : public Scorer {
 public:
  RiggedScorer(const std::vector<BenchmarkItem>& items, const std::set<std::string>& wrong,
               const std::set<std::string>& fail, const std::set<std::string>& garble) {
    for (const auto& item : items) {
      Fate fate = Fate::Right;
      if (wrong.contains(item.id)) fate = Fate::Wrong;
      if (fail.contains(item.id)) fate = Fate::Fail;
      if (garble.contains(item.id)) fate = Fate::Garble;
      const bool flip = fate == Fate::Wrong;
      if (const auto* mc = std::get_if<MultipleChoicePayload>(&item.payload)) {
        // A wrong item makes the next option the clear favourite.
        const std::size_t favourite = flip ? (mc->target_index + 1) % mc->options.size() : mc->target_index;
        for (std::size_t i = 0; i < mc->options.size(); ++i) {
          const double nll = i == favourite ? kGood : (i == mc->target_index ? kWorst : kBad);
          add(assemble_choice_sentence(mc->stimulus, mc->options[i]), nll, fate);
        }
      } else if (const auto* pair = std::get_if<MinimalPairPayload>(&item.payload)) {
        add(pair->grammatical, flip ? kBad : kGood, fate);
        add(pair->ungrammatical, flip ? kGood : kBad, fate);
      } else if (const auto* c = std::get_if<CompletionPayload>(&item.payload)) {
        std::string prompt = c->prompt_with_mask.substr(0, c->prompt_with_mask.find(kMaskMarker));
        while (!prompt.empty() && prompt.back() == ' ') prompt.pop_back();
        // Wrong completions contain no verb, so they fail both scorings.
        completions_[prompt] = {flip ? std::string("e poi") : c->strict_answers.front(), fate};
      }
    }
  }

  std::string name() const override { return "rigged"; }
  ScorerCapabilities capabilities() const override { return {true, true, false}; }

  NllSum sequence_nll(std::string_view text) const override {
    const auto it = nll_.find(std::string(text));
    if (it == nll_.end()) return {kBad, 1};
    check(it->second.second);
    return {it->second.first, 1};
  }

  GeneratedText complete(std::string_view prompt, std::size_t, std::size_t) const override {
    const auto it = completions_.find(std::string(prompt));
    if (it == completions_.end()) throw ScorerError("unknown prompt");
    check(it->second.second);
    return {it->second.first, 0.0};
  }

  struct Garbled {};

 private:
  void add(const std::string& text, double nll, Fate fate) { nll_[text] = {nll, fate}; }

  static void check(Fate fate) {
    if (fate == Fate::Fail) throw ScorerError("rigged failure");
    if (fate == Fate::Garble) throw Garbled{};
  }

  std::unordered_map<std::string, std::pair<double, Fate>> nll_;
  std::unordered_map<std::string, std::pair<std::string, Fate>> completions_;
};

std::set<std::string> split_ids(const std::string& csv) {
  std::set<std::string> ids;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const auto id = csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!id.empty()) ids.insert(id);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scripted external scorer"};
  std::string benchmark;
  std::string wrong, fail, garble;
  app.add_option("--benchmark", benchmark, "Benchmark items (JSON lines)")->required();
  app.add_option("--wrong", wrong, "Comma-separated ids answered incorrectly");
  app.add_option("--fail", fail, "Comma-separated ids answered with an error reply");
  app.add_option("--garble", garble, "Comma-separated ids answered with a non-JSON line");
  CLI11_PARSE(app, argc, argv);

  try {
    const RiggedScorer scorer(load_benchmark(benchmark), split_ids(wrong), split_ids(fail), split_ids(garble));
    std::string line;
    while (std::getline(std::cin, line)) {
      try {
        // Garbled is not a std::exception, so it escapes handle_request.
        const auto reply = protocol::handle_request(scorer, nlohmann::json::parse(line));
        std::cout << reply.dump() << std::endl;
      } catch (const RiggedScorer::Garbled&) {
        std::cout << "this is not json" << std::endl;
      } catch (const std::exception& e) {
        std::cout << nlohmann::json{{"error", e.what()}}.dump() << std::endl;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "rigged_scorer: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
