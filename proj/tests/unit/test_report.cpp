// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <regex>
#include <sstream>

#include <doctest.h>

#include "babylab/error.hpp"
#include "babylab/report.hpp"
#include "babylab/scoring.hpp"
#include "oracles.hpp"

using namespace babylab;
using namespace babylab::testing;

namespace {

BenchmarkRun rigged_run(int wrong_every) {
  TableScorer s;
  std::vector<BenchmarkItem> items;
  for (int i = 0; i < 12; ++i) {
    const std::string good = "g" + std::to_string(i), bad = "b" + std::to_string(i);
    s.perplexity[good] = 2;
    s.perplexity[bad] = (i % wrong_every == 0) ? 1 : 3;
    auto item = pair_item("acc-" + std::to_string(10 + i), good, bad);
    item.structure_tag = i % 2 ? "negation" : "agreement";
    items.push_back(item);
  }
  s.completion["La mamma cucina. Le mamme"] = "e i papà faranno";
  items.push_back(completion_item("cmp-1", "La mamma cucina. Le mamme <mask>", {"cucinano"}, {"cucinano", "faranno"}));
  return run_benchmark(s, items);
}

ReportInputs inputs(const BenchmarkRun& run, const NormSet& norms) {
  ReportInputs in;
  in.manifest.command = "eval";
  in.manifest.tool_version = "test";
  in.manifest.started_at = "2026-01-01T00:00:00Z";
  in.manifest.finished_at = "2026-01-01T00:00:01Z";
  in.scorer = "table";
  in.run = &run;
  in.norms = &norms;
  in.exposure = TrainingExposure{50'000'000, 10'000'000, "flag"};
  return in;
}

}  // namespace

TEST_CASE("report carries every section") {
  const auto run = rigged_run(4);
  const auto norms = NormSet::load(fixture("norms_synthetic.json"));
  const auto r = build_report(inputs(run, norms), false);
  CHECK(r.at("schema") == kReportSchema);
  for (const char* key : {"manifest", "scorer", "model_age", "tasks", "structures", "completion", "raw_scores",
                          "age_equivalents", "errored_items", "items"}) {
    CAPTURE(key);
    CHECK(r.contains(key));
  }
  CHECK(r.at("tasks").at("BVL/acceptability").at("accuracy").get<double>() == doctest::Approx(9.0 / 12.0));
  CHECK(r.at("structures").contains("negation"));
  CHECK(r.at("completion").at("strict").at("accuracy") == 0.0);
  CHECK(r.at("completion").at("loose").at("accuracy") == 1.0);
  CHECK(r.at("model_age").at("years") == 5.0);
  CHECK(r.at("raw_scores").at("BVL_acceptability").at("value") == 9.0);
  CHECK(r.at("age_equivalents").at("BVL_acceptability").at("reference") == "5;0-5;5");
  CHECK(r.at("manifest").contains("started_at"));
  CHECK_FALSE(build_report(inputs(run, norms), true).at("manifest").contains("started_at"));
}

TEST_CASE("accuracies lie in the unit interval and strict <= loose") {
  const auto run = rigged_run(3);
  const auto norms = NormSet::load(fixture("norms_synthetic.json"));
  const auto r = build_report(inputs(run, norms), true);
  for (const auto& [k, v] : r.at("tasks").items()) {
    CHECK(v.at("accuracy").get<double>() >= 0.0);
    CHECK(v.at("accuracy").get<double>() <= 1.0);
  }
  CHECK(r.at("completion").at("strict").at("accuracy").get<double>() <=
        r.at("completion").at("loose").at("accuracy").get<double>());
}

TEST_CASE("without norms the scores are marked unavailable") {
  const auto run = rigged_run(4);
  auto in = inputs(run, NormSet{});
  in.norms = nullptr;
  in.exposure.reset();
  const auto r = build_report(in, true);
  CHECK(r.at("model_age").is_null());
}

TEST_CASE("every number in the text table is the JSON number") {
  const auto run = rigged_run(5);
  const auto norms = NormSet::load(fixture("norms_synthetic.json"));
  const auto r = build_report(inputs(run, norms), true);
  const auto text = render_text(r);
  for (const auto& [k, v] : r.at("tasks").items()) {
    CAPTURE(k);
    CHECK(text.find(k) != std::string::npos);
    CHECK(text.find(v.at("accuracy").dump()) != std::string::npos);
  }
  const auto csv = render_csv(r);
  CHECK(csv.rfind("section,key,metric,value", 0) == 0);
  CHECK(csv.find("task,BVL/acceptability,accuracy," + r.at("tasks").at("BVL/acceptability").at("accuracy").dump()) !=
        std::string::npos);
}

TEST_CASE("canonical reports are deterministic") {
  const auto norms = NormSet::load(fixture("norms_synthetic.json"));
  const auto a = rigged_run(4), b = rigged_run(4);
  CHECK(build_report(inputs(a, norms), true).dump() == build_report(inputs(b, norms), true).dump());
}

TEST_CASE("comparison tables") {
  const auto norms = NormSet::load(fixture("norms_synthetic.json"));
  const auto a = rigged_run(4), b = rigged_run(2);
  auto ra = build_report(inputs(a, norms), true);
  auto rb = build_report(inputs(b, norms), true);
  rb["scorer"] = "other";
  rb["tasks"]["BVL/idiom"] = {{"accuracy", 0.5}, {"correct", 1}, {"total", 2}};

  const std::vector<nlohmann::json> one{ra};
  const auto single = compare_reports(one);
  CHECK(single.at("columns").size() == 1);
  for (const auto& row : single.at("rows")) {
    const std::string key = row.at("key");
    if (key.rfind("completion/", 0) == 0) continue;
    CHECK(row.at("values")[0] == ra.at("tasks").at(key).at("accuracy"));
  }

  const std::vector<nlohmann::json> two{rb, ra};
  const auto cmp = compare_reports(two);
  CHECK(cmp.at("columns")[0] == "other");
  CHECK(cmp.at("columns")[1] == "table");
  // Union of tasks plus the two completion rows.
  CHECK(cmp.at("rows").size() == 3 + 2);
  const auto csv = render_comparison_csv(cmp);
  CHECK(csv.find("other") < csv.find("table"));
  CHECK_FALSE(render_comparison_text(cmp).empty());
}

TEST_CASE("schema mismatches are refused") {
  TempDir dir("schema");
  std::ofstream(dir / "old.json") << R"({"schema": "babylab.report/0"})";
  CHECK_THROWS_AS(load_report(dir / "old.json"), ConfigError);
  CHECK_THROWS_AS(load_report(dir / "missing.json"), IoError);
}

TEST_CASE("atomic writes replace whole files") {
  TempDir dir("atomic");
  write_text_atomic(dir / "f.txt", "uno");
  write_text_atomic(dir / "f.txt", "due");
  std::ifstream in(dir / "f.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "due");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  CHECK(files == 1);
}

TEST_CASE("timestamps are UTC ISO 8601") {
  CHECK(std::regex_match(utc_timestamp(), std::regex(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z)")));
}
