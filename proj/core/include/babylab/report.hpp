// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "babylab/benchmark.hpp"
#include "babylab/scoring.hpp"

namespace babylab {

inline constexpr std::string_view kReportSchema = "babylab.report/1";

/// What produced an artifact: command, inputs, seed and timing.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> configs;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> artifacts;
  std::string started_at;
  std::string finished_at;
  std::string tool_version;

  /// Canonical form leaves out the timestamps.
  nlohmann::json to_json(bool canonical) const;
};

/// Current UTC time as an ISO-8601 string.
std::string utc_timestamp();

/// How many word tokens the scored model saw in training, and where the
/// figure came from ("manifest", "checkpoint" or "flag").
struct TrainingExposure {
  double words = 0.0;
  double words_per_year = 10'000'000.0;
  std::string source;
};

struct ReportInputs {
  RunManifest manifest;
  std::string scorer;
  const BenchmarkRun* run = nullptr;
  const NormSet* norms = nullptr;
  std::optional<TrainingExposure> exposure;
};

/// Assembles the evaluation report. Layout:
///   {"schema", "manifest", "scorer", "model_age", "tasks", "structures",
///    "completion": {"strict", "loose"}, "raw_scores", "age_equivalents",
///    "errored_items", "items"}
/// Raw scores that cannot be computed (e.g. a TROG-2 set that is not 80
/// items) are kept with "available": false and a reason.
nlohmann::json build_report(const ReportInputs& inputs, bool canonical);

/// Human-readable table. Every number is printed exactly as serialized in
/// the JSON report.
std::string render_text(const nlohmann::json& report);

/// Long-form CSV: section,key,metric,value.
std::string render_csv(const nlohmann::json& report);

/// Loads a report and checks its schema id. Throws ConfigError on mismatch.
nlohmann::json load_report(const std::filesystem::path& path);

/// Per-task accuracy comparison across reports, one column per report in
/// argument order, rows over the union of tasks (sorted):
///   {"columns": [scorer...], "rows": [{"key", "values": [acc|null...]}]}
nlohmann::json compare_reports(std::span<const nlohmann::json> reports);
std::string render_comparison_csv(const nlohmann::json& comparison);
std::string render_comparison_text(const nlohmann::json& comparison);

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace babylab
