// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "babylab/benchmark.hpp"
#include "babylab/commands.hpp"
#include "babylab/corpus.hpp"
#include "babylab/error.hpp"
#include "babylab/scorers.hpp"
#include "babylab/scoring.hpp"
#include "babylab/trainer.hpp"
#include "oracles.hpp"

using namespace babylab;
using namespace babylab::testing;

namespace {

// Collects failed sub-checks for one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok) failures_.push_back(what);
  }
  bool ok() const { return failures_.empty(); }
  std::string summary() const {
    if (ok()) return std::to_string(total_) + " checks";
    std::ostringstream s;
    s << failures_.size() << "/" << total_ << " checks failed; first: " << failures_.front();
    return s.str();
  }

 private:
  std::size_t total_ = 0;
  std::vector<std::string> failures_;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// 1. Parameter counts.
void parameter_counts(Checks& c) {
  c.expect(count_params(decoder_preset()) == 131'922'432, "decoder preset count");
  c.expect(count_params(encoder_preset()) == 26'630'704, "encoder preset count");
  c.expect(enumerated_param_count(decoder_preset()) == 131'922'432, "decoder enumeration");
  c.expect(enumerated_param_count(encoder_preset()) == 26'630'704, "encoder enumeration");
  std::mt19937_64 rng(20240501);
  for (int i = 0; i < 100; ++i) {
    const auto cfg = random_config(rng);
    const auto model = TransformerModel::build(cfg, static_cast<std::uint64_t>(i));
    c.expect(count_params(cfg) == built_tensor_total(model), "random config " + cfg.to_json().dump());
  }
}

// 2. Gradients.
void gradients(Checks& c) {
  for (const auto kind : {ModelKind::Decoder, ModelKind::Encoder}) {
    for (const auto& e : gradient_errors(kind)) {
      c.expect(e.relative < 1e-3, std::string(to_string(kind)) + " " + e.name + " rel " + fmt(e.relative));
    }
  }
}

// 3. Causality and normalization.
void causality(Checks& c) {
  std::mt19937_64 rng(3);
  const auto dec = TransformerModel::build(small_config(ModelKind::Decoder), 9);
  c.expect(causal_violations(dec, rng, 10) == 0, "causal perturbation");
  const auto enc = TransformerModel::build(small_config(ModelKind::Encoder), 9);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 12;
    const auto ids = random_ids(rng, n, 23);
    const double e1 = max_row_sum_error(dec.forward_causal(ids));
    c.expect(e1 < 1e-5, "decoder row sum off by " + fmt(e1));
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    const double e2 = max_row_sum_error(enc.forward_mlm(ids, all));
    c.expect(e2 < 1e-5, "encoder row sum off by " + fmt(e2));
  }
  const auto enc64 = TransformerModel64::build(small_config(ModelKind::Encoder), 4);
  for (int t = 0; t < 20; ++t) {
    const auto ids = random_ids(rng, 1 + rng() % 9, 23);
    const double got = sequence_nll(enc64, std::span<const TokenId>(ids)).total;
    const double want = pseudo_nll_by_single_masks(enc64, ids);
    c.expect(std::abs(got - want) < 1e-6, "pseudo-NLL differs by " + fmt(std::abs(got - want)));
  }
}

// 4. Schedule and stopping.
void schedule(Checks& c) {
  const auto cfg = TrainingConfig::restricted();
  c.expect(lr_at_step(cfg, 1000, 20'000) == 5e-4, "lr at step 1000");
  c.expect(lr_at_step(cfg, 0, 20'000) == 0.0, "lr at step 0");

  const std::vector<double> falling{3.0, 2.9, 2.8, 2.7, 2.6, 2.5};
  const std::vector<double> plateau{3.0, 2.0, 2.1, 2.2, 2.3};
  const std::vector<double> flat{2.0, 2.0, 2.0, 2.0};
  c.expect(!should_stop(falling, 3).stop, "falling never stops");
  const auto p = should_stop(plateau, 3);
  c.expect(p.stop && p.at_evaluation == 5, "plateau stops at evaluation 5");
  const auto f = should_stop(flat, 3);
  c.expect(f.stop && f.at_evaluation == 4, "ties stop at evaluation 4");

  // Restricted runs, including ones whose loss goes up or stays flat.
  const auto mcfg = small_config(ModelKind::Decoder);
  std::mt19937_64 rng(5);
  std::vector<std::vector<TokenId>> blocks;
  for (int i = 0; i < 12; ++i) blocks.push_back(random_ids(rng, 8, mcfg.vocab_size));
  for (double lr : {0.0, 1e-3, 5.0}) {
    auto tc = TrainingConfig::restricted();
    tc.initial_lr = lr;
    tc.batch_size = 2;
    tc.grad_accum_steps = 1;
    tc.warmup_steps = 2;
    tc.eval_fraction = 0.2;
    auto model = TransformerModel::build(mcfg, 1);
    const auto log = train(model, blocks, tc);
    c.expect(log.epochs.size() == 2 && log.stop_reason == StopReason::MaxEpochs,
             "restricted run at lr " + fmt(lr) + " ran " + std::to_string(log.epochs.size()) + " epochs");
  }
}

// 5. Raw scores and norms.
void scoring_oracles(Checks& c) {
  std::mt19937_64 rng(11);
  auto outcomes = [&](std::size_t n) {
    std::bernoulli_distribution d(std::uniform_real_distribution<double>(0, 1)(rng));
    std::vector<bool> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = d(rng);
    return v;
  };
  auto as_results = [](SourceTest test, Task task, const std::vector<bool>& v) {
    std::vector<TaskResult> rs(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      rs[i].item_id = std::to_string(i);
      rs[i].source_test = test;
      rs[i].task = task;
      rs[i].correct = v[i];
    }
    return rs;
  };
  for (int i = 0; i < 1000; ++i) {
    const auto v = outcomes(80);
    c.expect(raw_trog(as_results(SourceTest::TROG2, Task::SentenceComprehension, v)).value == brute_force_trog(v),
             "TROG run " + std::to_string(i));
  }
  for (int i = 0; i < 1000; ++i) {
    const auto v = outcomes(74);
    const double correct = static_cast<double>(std::count(v.begin(), v.end(), true));
    c.expect(raw_tcgb(as_results(SourceTest::TCGB2, Task::SentenceComprehension, v)).value + 0.5 * correct == 37.0,
             "TCGB run " + std::to_string(i));
  }
  for (int i = 0; i < 1000; ++i) {
    const auto r = raw_count(as_results(SourceTest::PPVT, Task::LexicalComprehension, outcomes(1 + rng() % 200)));
    c.expect(r.interval && r.interval->second - r.interval->first == 10.0, "PPVT interval width");
  }

  const auto norms = NormSet::load(fixture("norms_synthetic.json"));
  std::uniform_real_distribution<double> spread(-10.0, 10.0);
  for (const auto& [name, table] : norms.tables) {
    for (const auto& band : table.bands) {
      RawScore raw;
      raw.test = name;
      raw.value = band.mean + spread(rng);
      const double sign = table.orientation == Orientation::LowerBetter ? -1.0 : 1.0;
      const double want = sign * (raw.value - band.mean) / band.sd;
      const double got = age_equivalent(raw, band.ages, table).z;
      c.expect(std::abs(got - want) <= 1e-12, name + " " + band.ages.label() + " z");

      raw.value = band.mean;
      const auto age = equivalent_linguistic_age(raw, table);
      c.expect(age.band && *age.band == band.ages, name + " " + band.ages.label() + " linguistic age");
    }
  }
}

// 6. Harness semantics.
void harness(Checks& c) {
  std::mt19937_64 rng(13);
  auto rig = [](const BenchmarkItem& item, const std::vector<double>& ppl) {
    TableScorer s;
    const auto& mc = std::get<MultipleChoicePayload>(item.payload);
    for (std::size_t i = 0; i < ppl.size(); ++i) s.perplexity[assemble_choice_sentence(mc.stimulus, mc.options[i])] = ppl[i];
    return s;
  };
  const std::vector<std::function<double(double)>> transforms{
      [](double x) { return x * x * x; }, [](double x) { return std::log1p(x) + 1.0; },
      [](double x) { return std::exp(x / 4.0); }, [](double x) { return std::sqrt(x); }};
  for (int r = 0; r < 500; ++r) {
    const std::size_t n = 3 + rng() % 2;
    std::vector<std::string> options;
    for (std::size_t i = 0; i < n; ++i) options.push_back("opzione " + std::to_string(i));
    const auto item = choice_item("r", options, rng() % n);
    std::vector<double> ppl(n);
    for (auto& p : ppl) p = 1.0 + static_cast<double>(rng() % 5);
    const auto base = run_multiple_choice(rig(item, ppl), item);
    for (const auto& f : transforms) {
      std::vector<double> mapped(n);
      for (std::size_t i = 0; i < n; ++i) mapped[i] = f(ppl[i]);
      const auto got = run_multiple_choice(rig(item, mapped), item);
      c.expect(got.chosen == base.chosen && got.tie == base.tie, "rig " + std::to_string(r));
    }
  }

  const auto item = choice_item("t", {"uno", "due", "tre"}, 1);
  auto tied = run_multiple_choice(rig(item, {2, 2, 5}), item);
  c.expect(std::get<std::size_t>(tied.chosen) == 0 && tied.tie && !tied.correct, "ppl [2,2,5] tie-break");
  tied = run_multiple_choice(rig(item, {4, 4, 4}), item);
  c.expect(std::get<std::size_t>(tied.chosen) == 0 && tied.tie, "uniform tie-break");
  auto clear = run_multiple_choice(rig(item, {9, 2, 5}), item);
  c.expect(std::get<std::size_t>(clear.chosen) == 1 && clear.correct && !clear.tie, "ppl [9,2,5]");
  TableScorer same;
  same.perplexity["stessa"] = 3;
  const auto pair = run_acceptability(same, pair_item("p", "stessa", "stessa"));
  c.expect(pair.tie && !pair.correct, "identical pair tie");

  const std::vector<std::string> verbs{"corrono", "saltano", "cantano", "ridono"};
  const std::vector<std::string> fillers{"e", "la", "belle", "poi"};
  for (int r = 0; r < 500; ++r) {
    TableScorer s;
    std::vector<BenchmarkItem> items;
    const std::size_t n = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string prompt = "P" + std::to_string(i);
      const std::string strict = verbs[rng() % verbs.size()];
      items.push_back(completion_item("c" + std::to_string(i), prompt + " <mask>", {strict},
                                      {strict, verbs[rng() % verbs.size()]}));
      std::string gen;
      for (std::size_t w = rng() % 4; w > 0; --w) {
        gen += (gen.empty() ? "" : " ") + (rng() % 2 ? verbs[rng() % verbs.size()] : fillers[rng() % fillers.size()]);
      }
      s.completion[prompt] = gen;
    }
    const auto run = run_benchmark(s, items);
    c.expect(run.completion_strict.value() <= run.completion_loose.value(), "strict <= loose, rig " + std::to_string(r));
  }
}

double acceptability(const BenchmarkRun& run) { return run.per_task.at("BVL/acceptability").value(); }

// 7. End-to-end smoke experiment.
void smoke(Checks& c, std::string& detail) {
  TempDir dir("acceptance-train");
  TrainArgs args;
  args.model_config = fixture("toy_decoder.json");
  args.training_config = fixture("toy_training.json");
  args.corpus = fixture("grammar_manifest.json");
  args.out = dir.path();
  args.block_length = 32;
  const auto started = std::chrono::steady_clock::now();
  cmd_train(args);
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 60.0;
  c.expect(minutes < 10.0, "training took " + fmt(minutes) + " minutes");

  const auto model_config = ModelConfig::from_json(nlohmann::json::parse(std::ifstream(fixture("toy_decoder.json"))));
  const auto training_config = TrainingConfig::from_json(nlohmann::json::parse(std::ifstream(fixture("toy_training.json"))));
  c.expect(count_params(model_config) <= 1'000'000, "toy decoder has at most 1M parameters");
  std::size_t sentences = 0;
  for (const auto& doc : load_documents(CorpusManifest::load(fixture("grammar_manifest.json")))) sentences += doc.size();
  c.expect(sentences == 200, "grammar has " + std::to_string(sentences) + " sentences");

  const auto log = nlohmann::json::parse(std::ifstream(dir / "training_log.json"));
  c.expect(log.at("epochs").size() == 2, "trained for two epochs");

  const auto items = load_benchmark(fixture("benchmark.jsonl"));
  c.expect(items.size() >= 35 && items.size() <= 45, "fixture benchmark has ~40 items");
  const auto trained = ModelScorer::from_checkpoint(dir / "last.ckpt");
  // Same tokenizer and the same initialization the trainer started from.
  const ModelScorer frozen(Tokenizer::load(dir / "tokenizer.json"),
                           TransformerModel::build(model_config, training_config.seed), "random-init");
  const double a_trained = acceptability(run_benchmark(trained, items));
  const double a_random = acceptability(run_benchmark(frozen, items));
  detail = "trained " + fmt(a_trained) + " vs random-init " + fmt(a_random) + ", diff " +
           fmt(a_trained - a_random) + " (need >= 0.15)";
  c.expect(a_trained - a_random >= 0.15 - 1e-12, "paired acceptability improvement");

  // Full report for the trained checkpoint, aged by the 25M x 2 manifest.
  EvalArgs eval;
  eval.scorer = "ckpt:" + (dir / "last.ckpt").string();
  eval.benchmark = fixture("benchmark.jsonl");
  eval.norms = fixture("norms_synthetic.json");
  eval.corpus = fixture("synthetic_25m_manifest.json");
  eval.out = dir / "eval";
  eval.canonical = true;
  const auto report = cmd_eval(eval);
  for (const char* key : {"schema", "manifest", "scorer", "model_age", "tasks", "structures", "completion",
                          "raw_scores", "age_equivalents", "errored_items", "items"}) {
    c.expect(report.contains(key) && !report.at(key).is_null(), std::string("report field ") + key);
  }
  c.expect(report.at("model_age").at("training_words") == 50'000'000.0, "model exposure is 50M words");
  c.expect(report.at("model_age").at("years") == 5.0, "model age is 5 years");
  for (const auto& [name, ae] : report.at("age_equivalents").items()) {
    if (name.rfind("BVL_", 0) == 0) {
      c.expect(ae.at("reference") == "5;0-5;5", name + " reference band " + ae.at("reference").dump());
    }
  }
  for (const auto& [name, task] : report.at("tasks").items()) c.expect(task.contains("accuracy"), name + " accuracy");
  c.expect(!report.at("structures").empty(), "structure breakdown");
  c.expect(report.at("completion").contains("strict") && report.at("completion").contains("loose"), "completion rows");
}

// 8. External adapter conformance.
void adapter(Checks& c) {
#ifdef BABYLAB_RIGGED_SCORER
  TempDir dir("acceptance-adapter");
  EvalArgs eval;
  eval.scorer = std::string("cmd:") + BABYLAB_RIGGED_SCORER + " --benchmark " + fixture("benchmark.jsonl").string() +
                " --wrong acc-02,acc-05,cmp-03,idi-04,sen-01,trg-02,ppv-01" + " --fail acc-07,cmp-05,tcg-01" +
                " --garble idi-02,lex-02";
  eval.benchmark = fixture("benchmark.jsonl");
  eval.norms = fixture("norms_synthetic.json");
  eval.out = dir.path();
  eval.canonical = true;
  const auto r = cmd_eval(eval);

  // Hand-computed from the fixture: items per task minus errored ones, and
  // the wrong ones among the rest.
  const std::vector<std::tuple<std::string, int, int>> expected{
      {"BVL/acceptability", 13, 15},           // 16 items, 1 failed, 2 wrong
      {"BVL/completion", 4, 5},                // 6 items, 1 failed, 1 wrong
      {"BVL/idiom", 2, 3},                     // 4 items, 1 garbled, 1 wrong
      {"BVL/sentence_comprehension", 4, 5},    // 5 items, 1 wrong
      {"TROG2/sentence_comprehension", 3, 4},  // 4 items, 1 wrong
      {"TCGB2/sentence_comprehension", 2, 2},  // 3 items, 1 failed
      {"BVL/lexical_comprehension", 1, 1},     // 2 items, 1 garbled
      {"PPVT/lexical_comprehension", 1, 2},    // 2 items, 1 wrong
  };
  for (const auto& [key, correct, total] : expected) {
    const auto& t = r.at("tasks").at(key);
    c.expect(t.at("correct") == correct && t.at("total") == total &&
                 t.at("accuracy").get<double>() == static_cast<double>(correct) / static_cast<double>(total),
             key + " got " + t.dump());
  }
  c.expect(r.at("completion").at("strict").at("accuracy").get<double>() == 0.8, "strict completion 4/5");
  c.expect(r.at("completion").at("loose").at("accuracy").get<double>() == 0.8, "loose completion 4/5");

  const std::vector<std::string> errored{"acc-07", "cmp-05", "idi-02", "lex-02", "tcg-01"};
  c.expect(r.at("errored_items").get<std::vector<std::string>>() == errored,
           "errored items " + r.at("errored_items").dump());
  for (const auto& item : r.at("items")) {
    const std::string id = item.at("item_id");
    const bool should_error = std::find(errored.begin(), errored.end(), id) != errored.end();
    c.expect(item.contains("error") == should_error, id + " error flag");
  }
  // Raw counts treat errored items as not reached.
  c.expect(r.at("raw_scores").at("BVL_acceptability").at("value") == 13.0, "BVL acceptability raw score");
#else
  c.expect(false, "built without the rigged scorer");
#endif
}

struct Criterion {
  int id;
  const char* title;
  std::function<void(Checks&, std::string&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "parameter-count reconstruction", [](Checks& c, std::string&) { parameter_counts(c); }},
      {2, "gradient correctness (rel err < 1e-3)", [](Checks& c, std::string&) { gradients(c); }},
      {3, "causality and normalization", [](Checks& c, std::string&) { causality(c); }},
      {4, "schedule and stopping", [](Checks& c, std::string&) { schedule(c); }},
      {5, "scoring oracles", [](Checks& c, std::string&) { scoring_oracles(c); }},
      {6, "harness semantics", [](Checks& c, std::string&) { harness(c); }},
      {7, "end-to-end smoke experiment", [](Checks& c, std::string& d) { smoke(c, d); }},
      {8, "external adapter conformance", [](Checks& c, std::string&) { adapter(c); }},
  };
  int failed = 0;
  for (const auto& criterion : criteria) {
    Checks checks;
    std::string detail;
    const auto started = std::chrono::steady_clock::now();
    try {
      criterion.run(checks, detail);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::printf("criterion %d: %s - %s [%s%s%s; %.1fs]\n", criterion.id, checks.ok() ? "PASS" : "FAIL",
                criterion.title, checks.summary().c_str(), detail.empty() ? "" : "; ", detail.c_str(), seconds);
    std::fflush(stdout);
    if (!checks.ok()) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
