// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/report.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "babylab/error.hpp"

namespace babylab {

using nlohmann::json;

namespace {

json accuracy_json(const Accuracy& a) {
  return {{"correct", a.correct}, {"total", a.total}, {"accuracy", a.value()}};
}

std::string num(const json& value) { return value.is_null() ? "-" : value.dump(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

// Results of one norm test, in item-id order.
std::map<std::string, std::vector<TaskResult>> group_by_test(const BenchmarkRun& run) {
  std::map<std::string, std::vector<TaskResult>> groups;
  for (const auto& r : run.results) groups[norm_test_name(r.source_test, r.task)].push_back(r);
  return groups;
}

struct RawEntry {
  std::string key;
  std::optional<RawScore> raw;
  std::string reason;
};

std::vector<RawEntry> raw_scores(const BenchmarkRun& run) {
  std::vector<RawEntry> out;
  for (const auto& [test, results] : group_by_test(run)) {
    const auto source = results.front().source_test;
    const auto task = results.front().task;
    try {
      if (source == SourceTest::TROG2) {
        out.push_back({test, raw_trog(std::span(results)), {}});
      } else if (source == SourceTest::TCGB2) {
        out.push_back({test, raw_tcgb(std::span(results)), {}});
      } else if (task == Task::Completion) {
        out.push_back({test + "_strict", raw_count(std::span(results), false), {}});
        out.push_back({test + "_loose", raw_count(std::span(results), true), {}});
      } else {
        out.push_back({test, raw_count(std::span(results)), {}});
      }
    } catch (const std::invalid_argument& e) {
      out.push_back({test, std::nullopt, e.what()});
    }
  }
  return out;
}

}  // namespace

json RunManifest::to_json(bool canonical) const {
  json doc{{"command", command}, {"configs", configs}, {"artifacts", artifacts},
           {"tool_version", tool_version}};
  doc["seed"] = seed ? json(*seed) : json(nullptr);
  if (!canonical) {
    doc["started_at"] = started_at;
    doc["finished_at"] = finished_at;
  }
  return doc;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json build_report(const ReportInputs& inputs, bool canonical) {
  if (inputs.run == nullptr) throw std::invalid_argument("build_report: no benchmark run");
  const BenchmarkRun& run = *inputs.run;
  json doc;
  doc["schema"] = kReportSchema;
  doc["manifest"] = inputs.manifest.to_json(canonical);
  doc["scorer"] = inputs.scorer;

  if (inputs.exposure) {
    const auto& e = *inputs.exposure;
    doc["model_age"] = {{"training_words", e.words},
                        {"words_per_year", e.words_per_year},
                        {"years", e.words / e.words_per_year},
                        {"source", e.source}};
  } else {
    doc["model_age"] = nullptr;
  }

  doc["tasks"] = json::object();
  for (const auto& [key, acc] : run.per_task) doc["tasks"][key] = accuracy_json(acc);
  doc["structures"] = json::object();
  for (const auto& [key, acc] : run.per_structure) doc["structures"][key] = accuracy_json(acc);
  doc["completion"] = {{"strict", accuracy_json(run.completion_strict)},
                       {"loose", accuracy_json(run.completion_loose)}};

  doc["raw_scores"] = json::object();
  doc["age_equivalents"] = json::object();
  for (const auto& entry : raw_scores(run)) {
    if (!entry.raw) {
      doc["raw_scores"][entry.key] = {{"available", false}, {"reason", entry.reason}};
      doc["age_equivalents"][entry.key] = {{"available", false}, {"reason", "no raw score"}};
      continue;
    }
    const RawScore& raw = *entry.raw;
    json raw_doc = raw.to_json();
    raw_doc["available"] = true;
    doc["raw_scores"][entry.key] = raw_doc;

    json age_doc;
    if (inputs.norms == nullptr || !inputs.norms->contains(raw.test)) {
      age_doc = {{"available", false}, {"reason", "no norm table for " + raw.test}};
    } else if (!inputs.exposure) {
      age_doc = {{"available", false}, {"reason", "model age unknown"}};
    } else {
      const NormTable& table = inputs.norms->at(raw.test);
      const ModelAge age = model_age(inputs.exposure->words, inputs.exposure->words_per_year, table);
      age_doc = age_equivalent(raw, age.reference, table).to_json();
      age_doc["available"] = true;
      age_doc["adult"] = age.adult;
      age_doc["pre_norm"] = age.pre_norm;
      age_doc["equivalent_linguistic_age"] = equivalent_linguistic_age(raw, table).label();
    }
    doc["age_equivalents"][entry.key] = age_doc;
  }

  doc["errored_items"] = run.errored;
  doc["items"] = json::array();
  for (const auto& r : run.results) doc["items"].push_back(r.to_json());
  return doc;
}

std::string render_text(const json& report) {
  std::ostringstream out;
  out << "scorer: " << report.at("scorer").get<std::string>() << "\n";
  const auto& age = report.at("model_age");
  if (!age.is_null()) {
    out << "model age: " << num(age.at("years")) << " years (" << num(age.at("training_words"))
        << " words, " << age.at("source").get<std::string>() << ")\n";
  }
  out << "\n" << pad("task", 36) << pad("accuracy", 22) << "correct/total\n";
  auto row = [&](const std::string& key, const json& acc) {
    out << pad(key, 36) << pad(num(acc.at("accuracy")), 22) << num(acc.at("correct")) << "/"
        << num(acc.at("total")) << "\n";
  };
  for (const auto& [key, acc] : report.at("tasks").items()) row(key, acc);
  row("completion (strict)", report.at("completion").at("strict"));
  row("completion (loose)", report.at("completion").at("loose"));
  if (!report.at("structures").empty()) {
    out << "\n" << pad("structure", 36) << pad("accuracy", 22) << "correct/total\n";
    for (const auto& [key, acc] : report.at("structures").items()) row(key, acc);
  }
  out << "\n" << pad("raw score", 36) << pad("value", 10) << pad("z", 22) << pad("band", 10)
      << pad("reference", 14) << "equivalent age\n";
  for (const auto& [key, raw] : report.at("raw_scores").items()) {
    if (!raw.at("available").get<bool>()) {
      out << pad(key, 36) << "unavailable: " << raw.at("reason").get<std::string>() << "\n";
      continue;
    }
    out << pad(key, 36) << pad(num(raw.at("value")), 10);
    const auto& eq = report.at("age_equivalents").at(key);
    if (!eq.at("available").get<bool>()) {
      out << "no age equivalent: " << eq.at("reason").get<std::string>() << "\n";
      continue;
    }
    std::string reference = eq.at("reference").get<std::string>();
    if (eq.at("adult").get<bool>()) reference += " adult";
    out << pad(num(eq.at("z")), 22) << pad(eq.at("band_label").get<std::string>(), 10) << pad(reference, 14)
        << eq.at("equivalent_linguistic_age").get<std::string>() << "\n";
  }
  const auto& errored = report.at("errored_items");
  out << "\nerrored items: " << errored.size();
  for (const auto& id : errored) out << " " << id.get<std::string>();
  out << "\n";
  return out.str();
}

std::string render_csv(const json& report) {
  std::ostringstream out;
  out << "section,key,metric,value\n";
  auto emit = [&](const std::string& section, const std::string& key, const std::string& metric,
                  const json& value) {
    out << section << "," << csv_field(key) << "," << metric << ","
        << csv_field(value.is_string() ? value.get<std::string>() : num(value)) << "\n";
  };
  auto acc_rows = [&](const std::string& section, const std::string& key, const json& acc) {
    for (const char* metric : {"accuracy", "correct", "total"}) emit(section, key, metric, acc.at(metric));
  };
  for (const auto& [key, acc] : report.at("tasks").items()) acc_rows("task", key, acc);
  for (const auto& [key, acc] : report.at("structures").items()) acc_rows("structure", key, acc);
  acc_rows("completion", "strict", report.at("completion").at("strict"));
  acc_rows("completion", "loose", report.at("completion").at("loose"));
  for (const auto& [key, raw] : report.at("raw_scores").items()) {
    if (!raw.at("available").get<bool>()) continue;
    emit("raw", key, "value", raw.at("value"));
    const auto& eq = report.at("age_equivalents").at(key);
    if (!eq.at("available").get<bool>()) continue;
    emit("age_equivalent", key, "z", eq.at("z"));
    emit("age_equivalent", key, "band_label", eq.at("band_label"));
    emit("age_equivalent", key, "typical", eq.at("typical"));
    emit("age_equivalent", key, "reference", eq.at("reference"));
    emit("age_equivalent", key, "equivalent_linguistic_age", eq.at("equivalent_linguistic_age"));
  }
  return out.str();
}

json load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  const auto schema = doc.is_object() ? doc.value("schema", std::string()) : std::string();
  if (schema != kReportSchema) {
    throw ConfigError(path.string() + ": report schema '" + schema + "' is not " + std::string(kReportSchema));
  }
  return doc;
}

json compare_reports(std::span<const json> reports) {
  if (reports.empty()) throw ConfigError("no reports to compare");
  std::set<std::string> keys;
  auto task_rows = [](const json& report) {
    std::map<std::string, json> rows;
    for (const auto& [key, acc] : report.at("tasks").items()) rows[key] = acc.at("accuracy");
    rows["completion/strict"] = report.at("completion").at("strict").at("accuracy");
    rows["completion/loose"] = report.at("completion").at("loose").at("accuracy");
    return rows;
  };
  std::vector<std::map<std::string, json>> per_report;
  json columns = json::array();
  for (const auto& report : reports) {
    per_report.push_back(task_rows(report));
    for (const auto& [key, _] : per_report.back()) keys.insert(key);
    columns.push_back(report.at("scorer"));
  }
  json rows = json::array();
  for (const auto& key : keys) {
    json values = json::array();
    for (const auto& rowmap : per_report) {
      const auto it = rowmap.find(key);
      values.push_back(it == rowmap.end() ? json(nullptr) : it->second);
    }
    rows.push_back({{"key", key}, {"values", values}});
  }
  return {{"columns", columns}, {"rows", rows}};
}

std::string render_comparison_csv(const json& comparison) {
  std::ostringstream out;
  out << "task";
  for (const auto& c : comparison.at("columns")) out << "," << csv_field(c.get<std::string>());
  out << "\n";
  for (const auto& row : comparison.at("rows")) {
    out << csv_field(row.at("key").get<std::string>());
    for (const auto& v : row.at("values")) out << "," << (v.is_null() ? "" : v.dump());
    out << "\n";
  }
  return out.str();
}

std::string render_comparison_text(const json& comparison) {
  std::vector<std::size_t> widths;
  for (const auto& c : comparison.at("columns")) {
    widths.push_back(std::max<std::size_t>(c.get<std::string>().size(), 20) + 2);
  }
  std::ostringstream out;
  out << pad("task", 36);
  std::size_t i = 0;
  for (const auto& c : comparison.at("columns")) out << pad(c.get<std::string>(), widths[i++]);
  out << "\n";
  for (const auto& row : comparison.at("rows")) {
    out << pad(row.at("key").get<std::string>(), 36);
    i = 0;
    for (const auto& v : row.at("values")) out << pad(num(v), widths[i++]);
    out << "\n";
  }
  return out.str();
}

void write_text_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename onto " + path.string());
  }
}

}  // namespace babylab
