// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "babylab/commands.hpp"
#include "babylab/error.hpp"
#include "oracles.hpp"

using namespace babylab;
using namespace babylab::testing;

#ifdef BABYLAB_CLI

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(BABYLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string rigged(const std::string& flags = "") {
  return std::string("\"cmd:") + BABYLAB_RIGGED_SCORER + " --benchmark " + fixture("benchmark.jsonl").string() +
         " " + flags + "\"";
}

std::string f(std::string_view name) { return fixture(name).string(); }

}  // namespace

TEST_CASE("tokenize writes a reloadable, deterministic file") {
  TempDir dir("cli-tok");
  CHECK(run("tokenize --corpus " + f("grammar_manifest.json") + " --vocab-size 300 --out " + (dir / "a.json").string()) == 0);
  CHECK(run("tokenize --corpus " + f("grammar_manifest.json") + " --vocab-size 300 --out " + (dir / "b.json").string()) == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  CHECK(nlohmann::json::parse(slurp(dir / "a.json")).at("vocab").size() == 300);
}

TEST_CASE("exit codes") {
  TempDir dir("cli-exit");
  CHECK(run("--definitely-not-a-flag") == 2);
  CHECK(run("tokenize --corpus " + f("grammar_manifest.json") + " --vocab-size 5000 --out " +
            (dir / "t.json").string()) == 2);
  CHECK(run("budget --corpus /definitely/missing.json") == 4);
  CHECK(run("eval --scorer cmd:false --benchmark " + f("benchmark.jsonl") + " --out " + (dir / "r").string()) == 3);
  CHECK_FALSE(std::filesystem::exists(dir / "r" / "report.json"));
  CHECK(run("count-params --preset decoder") == 0);
}

TEST_CASE("an always-right scorer scores 1.0 everywhere") {
  TempDir dir("cli-right");
  REQUIRE(run("eval --scorer " + rigged() + " --benchmark " + f("benchmark.jsonl") + " --norms " +
              f("norms_synthetic.json") + " --out " + dir.path().string() + " --canonical") == 0);
  const auto r = nlohmann::json::parse(slurp(dir / "report.json"));
  for (const auto& [k, v] : r.at("tasks").items()) CHECK(v.at("accuracy") == 1.0);
  CHECK(r.at("completion").at("loose").at("accuracy") == 1.0);
  CHECK(r.at("errored_items").empty());
  CHECK(r.at("raw_scores").at("BVL_acceptability").at("value") == 16.0);
  CHECK(std::filesystem::exists(dir / "report.csv"));
  CHECK(std::filesystem::exists(dir / "report.txt"));
}

TEST_CASE("canonical eval output is byte-identical across runs") {
  TempDir a("cli-a"), b("cli-b");
  const std::string common = " --benchmark " + f("benchmark.jsonl") + " --norms " + f("norms_synthetic.json") +
                             " --corpus " + f("synthetic_25m_manifest.json") + " --canonical --workers 2";
  REQUIRE(run("eval --scorer " + rigged("--wrong acc-03") + common + " --out " + a.path().string()) == 0);
  REQUIRE(run("eval --scorer " + rigged("--wrong acc-03") + common + " --out " + b.path().string()) == 0);
  CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
}

TEST_CASE("report compares runs in argument order") {
  TempDir a("cli-ra"), b("cli-rb"), out("cli-cmp");
  REQUIRE(run("eval --scorer " + rigged() + " --benchmark " + f("benchmark.jsonl") + " --out " + a.path().string()) == 0);
  REQUIRE(run("eval --scorer " + rigged("--wrong acc-01") + " --benchmark " + f("benchmark.jsonl") + " --out " +
              b.path().string()) == 0);
  REQUIRE(run("report " + (b / "report.json").string() + " " + (a / "report.json").string() + " --out " +
              out.path().string()) == 0);
  const auto csv = slurp(out / "comparison.csv");
  CHECK(csv.find("--wrong acc-01") < csv.find("\n"));
  std::ofstream(out / "bad.json") << R"({"schema": "something/9"})";
  CHECK(run("report " + (out / "bad.json").string()) == 2);
}

TEST_CASE("restricted toy training writes checkpoints and a two-epoch log") {
  TempDir dir("cli-train");
  REQUIRE(run("train --config " + f("toy_decoder.json") + " --training-config " + f("toy_training.json") +
              " --corpus " + f("grammar_manifest.json") + " --block-length 32 --out " + dir.path().string()) == 0);
  for (const char* name : {"tokenizer.json", "last.ckpt", "best.ckpt", "epoch-1.ckpt", "epoch-2.ckpt",
                           "training_log.json"}) {
    CAPTURE(name);
    CHECK(std::filesystem::exists(dir / name));
  }
  const auto log = nlohmann::json::parse(slurp(dir / "training_log.json"));
  CHECK(log.at("stop_reason") == "max_epochs");
  CHECK(log.at("epochs").size() == 2);
  const auto& steps = log.at("steps");
  CHECK(steps.back().at("loss").get<double>() < steps.front().at("loss").get<double>());

  // The checkpoint scores through the same eval path as external scorers.
  CHECK(run("eval --scorer ckpt:" + (dir / "last.ckpt").string() + " --benchmark " + f("benchmark.jsonl") +
            " --out " + (dir / "eval").string()) == 0);
}

TEST_CASE("config errors name the field") {
  TempDir dir("cli-cfg");
  std::ofstream(dir / "bad.json") << R"({"kind": "decoder", "vocab_size": 300, "max_length": 16, "hidden": 10,
                                        "heads": 4, "layers": 1, "intermediate": 8})";
  TrainArgs args;
  args.model_config = dir / "bad.json";
  args.training_config = fixture("toy_training.json");
  args.corpus = fixture("grammar_manifest.json");
  args.out = dir / "out";
  try {
    cmd_train(args);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("hidden") != std::string::npos);
  }
}

#endif
